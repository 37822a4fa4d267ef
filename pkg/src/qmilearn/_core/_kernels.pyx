# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops over magnetization-sector basis states."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def sector_basis(int N, int n_ones):
    """Sorted bit patterns of ``N`` sites with ``n_ones`` set bits."""
    cdef long long s, full = 1LL << N
    cdef Py_ssize_t k = 0
    out_arr = np.empty(full, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    for s in range(full):
        # popcount via the builtin is portable across gcc and clang
        if __builtin_popcountll(s) == n_ones:
            out[k] = s
            k += 1
    return out_arr[:k].copy()


cdef extern from *:
    int __builtin_popcountll(unsigned long long)


def index_table(const cnp.int64_t[::1] basis, int N):
    table_arr = np.full(1 << N, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] table = table_arr
    cdef Py_ssize_t a
    for a in range(basis.shape[0]):
        table[basis[a]] = a
    return table_arr


def sector_hamiltonian(const cnp.int64_t[::1] basis, int N, double Jz, const double[::1] h):
    cdef Py_ssize_t d = basis.shape[0]
    cdef cnp.int64_t[::1] table = index_table(basis, N)
    H_arr = np.zeros((d, d), dtype=np.float64)
    cdef double[:, ::1] H = H_arr
    cdef Py_ssize_t a
    cdef int i
    cdef long long s
    cdef double diag, si, sj
    for a in range(d):
        s = basis[a]
        diag = 0.0
        sj = 1.0 - 2.0 * (s & 1)
        for i in range(N):
            si = sj
            diag += 0.5 * h[i] * si
            if i < N - 1:
                sj = 1.0 - 2.0 * ((s >> (i + 1)) & 1)
                diag += 0.25 * Jz * si * sj
                if si != sj:
                    H[a, table[s ^ (3LL << i)]] += 0.5
        H[a, a] = diag
    return H_arr


def pair_moments(const cnp.complex128_t[:, ::1] psi, const cnp.int64_t[::1] basis, int N):
    """Populations and flip-flop coherences of every site pair.

    Returns ``pops`` with shape (T, N, N, 4) indexed by 2*b_i + b_j and
    ``coh`` with shape (T, N, N) holding <01|rho_ij|10> for i < j.
    """
    cdef Py_ssize_t T = psi.shape[0], d = psi.shape[1]
    cdef cnp.int64_t[::1] table = index_table(basis, N)
    pops_arr = np.zeros((T, N, N, 4), dtype=np.float64)
    coh_arr = np.zeros((T, N, N), dtype=np.complex128)
    cdef double[:, :, :, ::1] pops = pops_arr
    # accumulate real and imaginary parts separately, then combine
    cre_arr = np.zeros((T, N, N), dtype=np.float64)
    cim_arr = np.zeros((T, N, N), dtype=np.float64)
    joint_arr = np.zeros((T, N, N), dtype=np.float64)
    single_arr = np.zeros((T, N), dtype=np.float64)
    cdef double[:, :, ::1] cre = cre_arr, cim = cim_arr, joint = joint_arr
    cdef double[:, ::1] single = single_arr
    cdef Py_ssize_t k, a, b
    cdef int i, j, u, v, n1, n0
    cdef int ones[64]
    cdef int zeros[64]
    cdef long long s
    cdef double p, total, ar, ai, br, bi_
    for a in range(d):
        s = basis[a]
        n1 = 0
        n0 = 0
        for i in range(N):
            if (s >> i) & 1:
                ones[n1] = i
                n1 += 1
            else:
                zeros[n0] = i
                n0 += 1
        for k in range(T):
            ar = psi[k, a].real
            ai = psi[k, a].imag
            p = ar * ar + ai * ai
            for u in range(n1):
                i = ones[u]
                single[k, i] += p
                for v in range(u + 1, n1):
                    joint[k, i, ones[v]] += p
            # coherence terms: bit 0 at the lower site i, bit 1 at the higher site j
            for u in range(n0):
                i = zeros[u]
                for v in range(n1):
                    j = ones[v]
                    if j > i:
                        b = table[s ^ ((1LL << i) | (1LL << j))]
                        br = psi[k, b].real
                        bi_ = psi[k, b].imag
                        cre[k, i, j] += ar * br + ai * bi_
                        cim[k, i, j] += ai * br - ar * bi_
    for k in range(T):
        total = 0.0
        for a in range(d):
            total += psi[k, a].real * psi[k, a].real + psi[k, a].imag * psi[k, a].imag
        for i in range(N):
            for j in range(i + 1, N):
                pops[k, i, j, 3] = joint[k, i, j]
                pops[k, i, j, 2] = single[k, i] - joint[k, i, j]
                pops[k, i, j, 1] = single[k, j] - joint[k, i, j]
                pops[k, i, j, 0] = total - single[k, i] - single[k, j] + joint[k, i, j]
    coh_arr.real = cre_arr
    coh_arr.imag = cim_arr
    return pops_arr, coh_arr

