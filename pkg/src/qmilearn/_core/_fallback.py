"""NumPy implementations of the compiled kernels.

Same signatures and outputs as ``_kernels``; used when the extension is not
built or when ``QMILEARN_PURE_PYTHON=1`` is set.
"""

import numpy as np


def sector_basis(N, n_ones):
    states = np.arange(1 << N, dtype=np.int64)
    counts = np.zeros_like(states)
    for i in range(N):
        counts += (states >> i) & 1
    return states[counts == n_ones]


def index_table(basis, N):
    table = np.full(1 << N, -1, dtype=np.int64)
    table[basis] = np.arange(len(basis))
    return table


def _bits(basis, N):
    return (basis[:, None] >> np.arange(N)) & 1


def sector_hamiltonian(basis, N, Jz, h):
    basis = np.asarray(basis, dtype=np.int64)
    d = len(basis)
    table = index_table(basis, N)
    spins = 1.0 - 2.0 * _bits(basis, N)
    H = np.zeros((d, d))
    diag = 0.5 * spins @ np.asarray(h, dtype=float)
    if N > 1:
        diag += 0.25 * Jz * np.sum(spins[:, :-1] * spins[:, 1:], axis=1)
    H[np.arange(d), np.arange(d)] = diag
    rows = np.arange(d)
    for i in range(N - 1):
        flip = spins[:, i] != spins[:, i + 1]
        a = rows[flip]
        b = table[basis[flip] ^ (3 << i)]
        H[a, b] += 0.5
    return H


def pair_moments(psi, basis, N):
    psi = np.ascontiguousarray(psi, dtype=np.complex128)
    basis = np.asarray(basis, dtype=np.int64)
    T = psi.shape[0]
    table = index_table(basis, N)
    bits = _bits(basis, N)
    prob = np.abs(psi) ** 2
    pops = np.zeros((T, N, N, 4))
    coh = np.zeros((T, N, N), dtype=np.complex128)
    for i in range(N):
        for j in range(i + 1, N):
            code = 2 * bits[:, i] + bits[:, j]
            for c in range(4):
                pops[:, i, j, c] = prob[:, code == c].sum(axis=1)
            src = np.flatnonzero(code == 1)
            if src.size:
                dst = table[basis[src] ^ ((1 << i) | (1 << j))]
                coh[:, i, j] = np.sum(psi[:, src] * psi[:, dst].conj(), axis=1)
    return pops, coh


def site_populations(psi, basis, N):
    psi = np.asarray(psi, dtype=np.complex128)
    bits = _bits(np.asarray(basis, dtype=np.int64), N)
    return (np.abs(psi) ** 2) @ (1 - bits).astype(float)
