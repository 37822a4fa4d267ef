"""Reduced density matrices, Renyi entropies (base 2), mutual information and Pauli correlations.

Density matrices on a site list use the Kronecker ordering in which the first
listed site is the most significant tensor factor, so the two-site Pauli
product ``sigma_a (site i) sigma_b (site j)`` is ``np.kron(P[a], P[b])``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product
from typing import Mapping, Sequence

import numpy as np

from . import _core
from .spinchain import StateVector

PAULI = {
    "I": np.eye(2, dtype=np.complex128),
    "X": np.array([[0, 1], [1, 0]], dtype=np.complex128),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    "Z": np.array([[1, 0], [0, -1]], dtype=np.complex128),
}

#: eigenvalues in (-CLIP_TOL, 0) are treated as zero; below that is an error
CLIP_TOL = 1e-10
#: eigenvalues under this contribute nothing to the von Neumann entropy
VN_CUTOFF = 1e-14


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    sites: tuple[int, ...]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.complex128)
        L = len(self.sites)
        if m.shape != (1 << L, 1 << L):
            raise ValueError(f"matrix shape {m.shape} does not fit {L} sites")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "sites", tuple(int(s) for s in self.sites))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.hermitian_part())

    def hermitian_part(self) -> np.ndarray:
        return 0.5 * (self.matrix + self.matrix.conj().T)

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))

    def is_valid(self, tol: float = 1e-10) -> bool:
        m = self.matrix
        return (
            np.max(np.abs(m - m.conj().T)) <= tol
            and abs(np.trace(m) - 1) <= tol
            and self.eigenvalues.min() >= -tol
        )


@dataclass(frozen=True)
class CorrelationTensor:
    """Pauli expectations of a one- or two-site cluster.

    Keys are label tuples over the cluster sites, e.g. ``("Z",)`` or
    ``("X", "I")``; the all-identity label is implicit (value 1).
    """

    cluster: tuple[int, ...]
    values: Mapping[tuple[str, ...], float]

    def __getitem__(self, label):
        if isinstance(label, str):
            label = tuple(label)
        return self.values[label]

    def is_complete(self) -> bool:
        return set(self.values) == set(pauli_labels(len(self.cluster)))


def pauli_labels(L: int) -> list[tuple[str, ...]]:
    """Non-identity Pauli strings on ``L`` sites (3 for L=1, 15 for L=2)."""
    return [lab for lab in product("IXYZ", repeat=L) if any(c != "I" for c in lab)]


def pauli_string(label: Sequence[str]) -> np.ndarray:
    out = np.ones((1, 1), dtype=np.complex128)
    for c in label:
        out = np.kron(out, PAULI[c])
    return out


def _validate_sites(N: int, sites: Sequence[int]) -> tuple[int, ...]:
    sites = tuple(int(s) for s in sites)
    if not sites:
        raise ValueError("site list must be nonempty")
    if len(set(sites)) != len(sites):
        raise ValueError(f"duplicate sites in {sites}")
    bad = [s for s in sites if not 1 <= s <= N]
    if bad:
        raise ValueError(f"sites {bad} out of range 1..{N}")
    return sites


def _as_tensor(full: np.ndarray, N: int) -> np.ndarray:
    # C-order axis k holds bit N-1-k, i.e. site N-k
    return full.reshape((2,) * N)


def _axis(N: int, site: int) -> int:
    return N - site


def _split_matrix(full: np.ndarray, N: int, sites: Sequence[int]) -> np.ndarray:
    """Reshape the amplitude vector into (sites, complement) matrix form."""
    keep = [_axis(N, s) for s in sites]
    rest = [k for k in range(N) if k not in keep]
    tens = np.transpose(_as_tensor(full, N), keep + rest)
    return tens.reshape(1 << len(keep), -1)


def reduced_density_matrix(state: StateVector, sites: Sequence[int]) -> DensityMatrix:
    """Partial trace of ``|psi><psi|`` onto ``sites``."""
    sites = _validate_sites(state.N, sites)
    M = _split_matrix(state.to_full(), state.N, sites)
    return DensityMatrix(M @ M.conj().T, sites)


def _clip_spectrum(lam: np.ndarray) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.size and lam.min() < -CLIP_TOL:
        raise ValueError(f"density matrix is not positive semidefinite (min eigenvalue {lam.min():.3e})")
    return np.clip(lam, 0.0, None)


def renyi_from_spectrum(lam, n: int, axis: int = -1):
    """Renyi entropy in bits from eigenvalues along ``axis``."""
    if n < 1 or int(n) != n:
        raise ValueError(f"Renyi order must be an integer >= 1, got {n}")
    lam = _clip_spectrum(lam)
    if n == 1:
        safe = np.where(lam > VN_CUTOFF, lam, 1.0)
        return -np.sum(np.where(lam > VN_CUTOFF, lam * np.log2(safe), 0.0), axis=axis)
    return np.log2(np.sum(lam ** n, axis=axis)) / (1 - n)


def renyi_entropy(rho: DensityMatrix | np.ndarray, n: int) -> float:
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    lam = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    return float(renyi_from_spectrum(lam, n))


def renyi_batch(mats: np.ndarray, n: int) -> np.ndarray:
    """Renyi entropy of every matrix in a ``(..., d, d)`` stack."""
    mats = np.asarray(mats)
    lam = np.linalg.eigvalsh(0.5 * (mats + np.swapaxes(mats.conj(), -1, -2)))
    return renyi_from_spectrum(lam, n)


def schmidt_spectrum(state: StateVector, A: Sequence[int]) -> np.ndarray:
    """Squared Schmidt coefficients of the ``A`` versus complement split."""
    A = _validate_sites(state.N, A)
    M = _split_matrix(state.to_full(), state.N, A)
    return np.linalg.svd(M, compute_uv=False) ** 2


def subsystem_entropy_schmidt(state: StateVector, A: Sequence[int],
                              orders: Sequence[int] = (1, 2, 3)) -> dict[int, float]:
    """Entropies of ``rho_A`` for several orders from one singular value decomposition."""
    lam = schmidt_spectrum(state, A)
    return {n: float(renyi_from_spectrum(lam, n)) for n in orders}


def _check_partition(N: int, A: Sequence[int], B: Sequence[int]):
    A = _validate_sites(N, A)
    B = _validate_sites(N, B)
    if set(A) & set(B):
        raise ValueError(f"subsystems overlap on sites {sorted(set(A) & set(B))}")
    if set(A) | set(B) != set(range(1, N + 1)):
        raise ValueError("A and B must together cover the whole chain")
    return A, B


def qmi(state: StateVector, A: Sequence[int], B: Sequence[int], n: int) -> float:
    """Mutual information S(A) + S(B) - S(AB) in bits; S(AB) = 0 for the pure chain."""
    A, B = _check_partition(state.N, A, B)
    sa = subsystem_entropy_schmidt(state, A, (n,))[n]
    sb = subsystem_entropy_schmidt(state, B, (n,))[n]
    return sa + sb


def qmi_orders(state: StateVector, A: Sequence[int], B: Sequence[int],
               orders: Sequence[int]) -> dict[int, float]:
    A, B = _check_partition(state.N, A, B)
    sa = subsystem_entropy_schmidt(state, A, orders)
    sb = subsystem_entropy_schmidt(state, B, orders)
    return {n: sa[n] + sb[n] for n in orders}


def pauli_expectations(rho: np.ndarray, L: int) -> np.ndarray:
    """``Tr(rho P)`` for every label of :func:`pauli_labels` over a ``(..., d, d)`` stack."""
    ops = np.stack([pauli_string(lab) for lab in pauli_labels(L)])
    vals = np.einsum("kij,...ji->...k", ops, rho)
    return vals


def rho_from_pauli(values: np.ndarray, L: int) -> np.ndarray:
    """Inverse of :func:`pauli_expectations`; no positivity is imposed."""
    values = np.asarray(values)
    ops = np.stack([pauli_string(lab) for lab in pauli_labels(L)])
    eye = np.eye(1 << L, dtype=np.complex128)
    return (eye + np.einsum("...k,kij->...ij", values, ops)) / (1 << L)


def cluster_correlations(state: StateVector, cluster: Sequence[int]) -> CorrelationTensor:
    cluster = _validate_sites(state.N, cluster)
    if len(cluster) > 2:
        raise ValueError(f"correlation tensors are limited to clusters of size <= 2, got {len(cluster)}")
    rho = reduced_density_matrix(state, cluster).matrix
    vals = pauli_expectations(rho, len(cluster))
    if np.max(np.abs(vals.imag)) > 1e-12:
        raise ArithmeticError("Pauli expectation has a non-negligible imaginary part")
    labels = pauli_labels(len(cluster))
    return CorrelationTensor(cluster, {lab: float(v) for lab, v in zip(labels, vals.real)})


def rdm_from_correlations(corr: CorrelationTensor) -> DensityMatrix:
    L = len(corr.cluster)
    if not corr.is_complete():
        raise ValueError("correlation tensor is incomplete")
    vals = np.array([corr.values[lab] for lab in pauli_labels(L)], dtype=float)
    return DensityMatrix(rho_from_pauli(vals, L), corr.cluster)


# batched one- and two-site matrices for sector states

def site_pairs(N: int) -> list[tuple[int, int]]:
    """1-based pairs ``(i, j)``, ``i < j``, in lexicographic order."""
    return list(combinations(range(1, N + 1), 2))


def local_density_matrices(psi: np.ndarray, basis: np.ndarray, N: int):
    """All single-site and pair density matrices of sector states.

    ``psi`` has shape ``(T, dim)``. Returns ``(singles, pairs)`` with shapes
    ``(T, N, 2, 2)`` and ``(T, N(N-1)/2, 4, 4)``; pairs follow :func:`site_pairs`.
    Magnetization conservation leaves only populations and the ``|01><10|``
    coherence nonzero.
    """
    psi = np.ascontiguousarray(np.atleast_2d(psi), dtype=np.complex128)
    basis = np.ascontiguousarray(basis, dtype=np.int64)
    T = psi.shape[0]
    p0 = _core.site_populations(psi, basis, N)
    singles = np.zeros((T, N, 2, 2), dtype=np.complex128)
    singles[:, :, 0, 0] = p0
    singles[:, :, 1, 1] = 1.0 - p0
    pops, coh = _core.pair_moments(psi, basis, N)
    iu, ju = np.triu_indices(N, k=1)
    pairs = np.zeros((T, len(iu), 4, 4), dtype=np.complex128)
    for c in range(4):
        pairs[:, :, c, c] = pops[:, iu, ju, c]
    pairs[:, :, 1, 2] = coh[:, iu, ju]
    pairs[:, :, 2, 1] = np.conj(coh[:, iu, ju])
    return singles, pairs
