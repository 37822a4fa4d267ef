"""Gaussian measurement noise on local correlations and its correction back to valid density matrices.

A noisy two-site block (two marginal 3-vectors and a 3x3 correlation block)
is mapped to the density matrix minimizing the weighted squared distance
between measured and implied Pauli expectations, over all positive
semidefinite unit-trace 4x4 matrices. The matrix is written as
``B B^dagger / Tr(B B^dagger)`` with an unconstrained complex factor ``B``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .entropy import (
    DensityMatrix,
    PAULI,
    pauli_expectations,
    pauli_labels,
    pauli_string,
    renyi_batch,
)
from .spinchain import make_rng

_AXES = "XYZ"
_PAIR_LABELS = pauli_labels(2)
_PAIR_OPS = np.stack([pauli_string(lab) for lab in _PAIR_LABELS])
# which of the 15 labels are single-site marginals (weight 1/sigma1^2)
_IS_MARGINAL = np.array(["I" in lab for lab in _PAIR_LABELS])


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass
class NoisyCorrelations:
    """Measured expectations: ``single[i, a] = <sigma_a^i>``, ``pair[p, a, b] = <sigma_a^i sigma_b^j>``.

    Pairs follow :func:`qmilearn.entropy.site_pairs`.
    """

    single: np.ndarray
    pair: np.ndarray
    sigma1: float
    sigma2: float

    def __post_init__(self):
        self.single = np.asarray(self.single, dtype=float)
        self.pair = np.asarray(self.pair, dtype=float)
        N = self.single.shape[0]
        if self.single.shape != (N, 3) or self.pair.shape != (N * (N - 1) // 2, 3, 3):
            raise ValueError("correlation arrays do not match a chain of N sites")
        if self.sigma1 < 0 or self.sigma2 < 0:
            raise ValueError("noise scales must be non-negative")

    @property
    def N(self) -> int:
        return self.single.shape[0]


@dataclass
class CorrectionResult:
    rho: DensityMatrix
    loss: float
    grad_norm: float
    converged: bool
    iterations: int


def exact_correlations(singles: np.ndarray, pairs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pauli expectations of local density matrices ``(N, 2, 2)`` and ``(P, 4, 4)``."""
    single = pauli_expectations(singles, 1).real
    full = pauli_expectations(pairs, 2).real
    idx = [_PAIR_LABELS.index((a, b)) for a in _AXES for b in _AXES]
    pair = full[..., idx].reshape(full.shape[:-1] + (3, 3))
    return single, pair


def inject_noise(single: np.ndarray, pair: np.ndarray, sigma: float, seed: int,
                 sigma2: float | None = None) -> NoisyCorrelations:
    """Add i.i.d. ``N(0, sigma^2)`` to every expectation value (``sigma2`` for pair blocks)."""
    if sigma < 0 or (sigma2 is not None and sigma2 < 0):
        raise ValueError("noise standard deviation must be non-negative")
    s2 = sigma if sigma2 is None else sigma2
    single = np.asarray(single, dtype=float)
    pair = np.asarray(pair, dtype=float)
    rng = make_rng(seed)
    noise1 = rng.standard_normal(single.shape)
    noise2 = rng.standard_normal(pair.shape)
    return NoisyCorrelations(single + sigma * noise1, pair + s2 * noise2, sigma, s2)


def pair_vector(t1: Sequence[float], t2: Sequence[float], t12) -> np.ndarray:
    """Arrange marginals and the correlation block in :func:`pauli_labels` (L=2) order."""
    t12 = np.asarray(t12, dtype=float)
    out = np.empty(15)
    for k, (a, b) in enumerate(_PAIR_LABELS):
        if a == "I":
            out[k] = t2[_AXES.index(b)]
        elif b == "I":
            out[k] = t1[_AXES.index(a)]
        else:
            out[k] = t12[_AXES.index(a), _AXES.index(b)]
    return out


def _weights(sigma1: float, sigma2: float) -> np.ndarray:
    return np.where(_IS_MARGINAL, 1.0 / sigma1 ** 2, 1.0 / sigma2 ** 2)


def weighted_loss(rho: np.ndarray, T: np.ndarray, sigma1: float, sigma2: float) -> float:
    C = pauli_expectations(rho, 2).real
    return float(np.sum(_weights(sigma1, sigma2) * (T - C) ** 2))


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.atleast_2d(v)
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    k = np.arange(1, v.shape[-1] + 1)
    cond = u - css / k > 0
    rho = cond.shape[-1] - 1 - np.argmax(cond[..., ::-1], axis=-1)
    theta = css[np.arange(len(v)), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def project_density(H: np.ndarray) -> np.ndarray:
    """Closest density matrix in Frobenius norm to each Hermitian matrix of a stack."""
    H = 0.5 * (H + np.swapaxes(H.conj(), -1, -2))
    lam, U = np.linalg.eigh(H)
    shape = lam.shape
    p = project_to_simplex(lam.reshape(-1, shape[-1])).reshape(shape)
    return np.einsum("...ik,...k,...jk->...ij", U, p, U.conj())


def _factor(rho: np.ndarray, floor: float = 1e-13) -> np.ndarray:
    # rounding-level eigenvalues would leave spurious directions in the factor
    lam, U = np.linalg.eigh(rho)
    lam = np.where(lam > floor, lam, 0.0)
    return U * np.sqrt(lam)[..., None, :]


def _rho_from_factor(B: np.ndarray) -> np.ndarray:
    M = B @ np.swapaxes(B.conj(), -1, -2)
    tau = np.trace(M, axis1=-2, axis2=-1).real
    return M / tau[..., None, None]


def _factor_grad(B: np.ndarray, T: np.ndarray, w: np.ndarray):
    """Loss and complex gradient (d/dRe B + i d/dIm B) for a stack of factors."""
    rho = _rho_from_factor(B)
    C = pauli_expectations(rho, 2).real
    r = T - C
    loss = np.sum(w * r * r, axis=-1)
    G = np.einsum("...k,kij->...ij", -2.0 * w * r, _PAIR_OPS)
    g = np.einsum("...ij,...ji->...", G, rho).real
    tau = np.einsum("...ij,...ij->...", B, B.conj()).real
    K = G @ B - g[..., None, None] * B
    return loss, 2.0 * K / tau[..., None, None]


def _grad_norm(grad: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(grad) ** 2, axis=(-2, -1)))


def _project_coords(c: np.ndarray) -> np.ndarray:
    """Closest physical point in Pauli coordinates (Euclidean, equivalently Frobenius in rho)."""
    rho = (np.eye(4) + np.einsum("...k,kij->...ij", c, _PAIR_OPS)) / 4
    return pauli_expectations(project_density(rho), 2).real


def _solve_weighted(T: np.ndarray, w: np.ndarray, max_iter: int, tol: float):
    """Accelerated projected gradient on sum_k w_k (T_k - c_k)^2 over physical ``c``."""
    c = _project_coords(T)
    if np.all(w == w[0]):
        return c, 0
    step = 1.0 / w.max()
    y, t = c.copy(), 1.0
    for it in range(1, max_iter + 1):
        c_new = _project_coords(y + step * w * (T - y))
        if np.max(np.abs(c_new - c)) < tol:
            return c_new, it
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = c_new + ((t - 1.0) / t_new) * (c_new - c)
        if np.sum(w * (T - c_new) ** 2) > np.sum(w * (T - c) ** 2):
            y, t_new = c_new.copy(), 1.0  # restart momentum
        c, t = c_new, t_new
    return c, max_iter


def correct_pair(T, sigma1: float, sigma2: float | None = None, max_iter: int = 10_000,
                 gtol: float = 1e-8) -> CorrectionResult:
    """Valid two-site density matrix closest to the noisy block ``T`` under the weighted loss.

    ``T`` is a 15-vector in :func:`pauli_labels` order or a tuple
    ``(t1, t2, t12)``. With equal weights the minimizer is the Frobenius
    projection of ``(I + T.P)/4`` onto density matrices; otherwise an
    accelerated projected-gradient iteration converges to it. Optimality is
    certified by the gradient norm with respect to the factor ``B``.
    """
    if isinstance(T, tuple):
        T = pair_vector(*T)
    T = np.asarray(T, dtype=float)
    if T.shape != (15,):
        raise ValueError("pair block must have 15 entries")
    s2 = sigma1 if sigma2 is None else sigma2
    if sigma1 <= 0 or s2 <= 0:
        raise ValueError("noise scales must be positive")
    w = _weights(sigma1, s2)
    c, it = _solve_weighted(T, w, max_iter, 1e-15)
    rho = (np.eye(4) + np.einsum("k,kij->ij", c, _PAIR_OPS)) / 4
    B = _factor(project_density(rho))
    loss, grad = _factor_grad(B, T, w)
    gnorm = float(_grad_norm(grad))
    rho = _rho_from_factor(B)
    rho = 0.5 * (rho + rho.conj().T)
    converged = gnorm < gtol
    if not converged:
        warnings.warn(f"pair correction stopped with gradient norm {gnorm:.2e} after {it} iterations",
                      ConvergenceWarning)
    return CorrectionResult(DensityMatrix(rho, (1, 2)), float(loss), gnorm, converged, it)


def correct_pairs(T: np.ndarray, sigma1: float, sigma2: float | None = None):
    """Vectorized :func:`correct_pair` over a ``(K, 15)`` stack.

    Returns ``(rho (K, 4, 4), loss (K,), grad_norm (K,))``.
    """
    T = np.asarray(T, dtype=float)
    s2 = sigma1 if sigma2 is None else sigma2
    if sigma1 <= 0 or s2 <= 0:
        raise ValueError("noise scales must be positive")
    if sigma1 != s2:
        results = [correct_pair(t, sigma1, s2) for t in T]
        return (np.stack([r.rho.matrix for r in results]), np.array([r.loss for r in results]),
                np.array([r.grad_norm for r in results]))
    w = _weights(sigma1, s2)
    rho_T = (np.eye(4) + np.einsum("...k,kij->...ij", T, _PAIR_OPS)) / 4
    B = _factor(project_density(rho_T))
    loss, grad = _factor_grad(B, T, w)
    rho = _rho_from_factor(B)
    rho = 0.5 * (rho + np.swapaxes(rho.conj(), -1, -2))
    return rho, loss, _grad_norm(grad)


def correct_single(T: Sequence[float]) -> DensityMatrix:
    """``(I + T.sigma)/2`` after shrinking ``T`` onto the unit ball if needed."""
    T = np.asarray(T, dtype=float)
    norm = float(np.linalg.norm(T))
    if norm > 1.0:
        T = T / norm
    rho = 0.5 * (PAULI["I"] + T[0] * PAULI["X"] + T[1] * PAULI["Y"] + T[2] * PAULI["Z"])
    return DensityMatrix(rho, (1,))


def correct_singles(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    norm = np.linalg.norm(T, axis=-1, keepdims=True)
    T = np.where(norm > 1.0, T / np.maximum(norm, 1e-300), T)
    ops = np.stack([PAULI["X"], PAULI["Y"], PAULI["Z"]])
    return 0.5 * (np.eye(2) + np.einsum("...k,kij->...ij", T, ops))


def corrected_density_matrices(noisy: NoisyCorrelations):
    """Corrected single-site ``(N, 2, 2)`` and pair ``(P, 4, 4)`` matrices plus pair losses."""
    N = noisy.N
    singles = correct_singles(noisy.single)
    iu, ju = np.triu_indices(N, k=1)
    T = np.stack([pair_vector(noisy.single[i], noisy.single[j], noisy.pair[p])
                  for p, (i, j) in enumerate(zip(iu, ju))])
    pairs, loss, gnorm = correct_pairs(T, noisy.sigma1, noisy.sigma2)
    return singles, pairs, loss, gnorm


def partial_traces(pairs: np.ndarray):
    """Marginals ``(rho_i, rho_j)`` of a stack of 4x4 pair matrices."""
    r = pairs.reshape(pairs.shape[:-2] + (2, 2, 2, 2))
    rho_i = np.einsum("...ajbj->...ab", r)
    rho_j = np.einsum("...iaib->...ab", r)
    return rho_i, rho_j


def features_from_corrected(singles: np.ndarray, pairs: np.ndarray, n: int) -> np.ndarray:
    """Irreducible-entropy features from corrected matrices.

    Single-site entries use the standalone single-site corrections; each pair
    entry subtracts the entropies of its own corrected pair matrix's marginals.
    """
    s1 = renyi_batch(singles, n)
    mi, mj = partial_traces(pairs)
    irr2 = renyi_batch(pairs, n) - renyi_batch(mi, n) - renyi_batch(mj, n)
    return np.concatenate([s1, irr2])


def corrected_features(noisy: NoisyCorrelations, n: int) -> np.ndarray:
    singles, pairs, _, _ = corrected_density_matrices(noisy)
    return features_from_corrected(singles, pairs, n)


def measurement_budget(sigma: float, N: int) -> tuple[int, int]:
    """Shots per correlation ``ceil(1/sigma^2)`` and total ``9 N (N-1) M / 2``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    M = math.ceil((1.0 / sigma ** 2) * (1.0 - 1e-12))
    return M, 9 * N * (N - 1) * M // 2


# dataset transform

def noisy_local_features(singles: np.ndarray, pairs: np.ndarray, sigma: float, seed: int,
                         orders: Sequence[int], sigma1: float | None = None,
                         sigma2: float | None = None) -> dict[int, np.ndarray]:
    """Features of one state after noise injection and correction.

    ``sigma == 0`` bypasses injection and correction entirely, so the result
    equals the noiseless features exactly.
    """
    from .dataset import irreducible_features

    if sigma == 0 and not sigma1 and not sigma2:
        return {n: irreducible_features(singles, pairs, n) for n in orders}
    s1 = sigma if sigma1 is None else sigma1
    s2 = sigma if sigma2 is None else sigma2
    single, pair = exact_correlations(singles, pairs)
    noisy = inject_noise(single, pair, s1, seed, sigma2=s2)
    cs, cp, _, _ = corrected_density_matrices(noisy)
    return {n: features_from_corrected(cs, cp, n) for n in orders}


def calibrate_dataset(ds, sigma: float, seed: int, sigma1: float | None = None,
                      sigma2: float | None = None):
    """Replace the features of every record by noisy-then-corrected ones; labels stay exact.

    All Renyi orders of one (realization, state, time) share one noise draw,
    seeded by ``spawn_seed(seed, w_index, realization, state, time_index)``.
    """
    from .dataset import DatasetFile, record_spec
    from .entropy import local_density_matrices
    from .spinchain import build_hamiltonian, evolve_many, initial_state, spawn_seed

    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    times = list(ds.header["times"])
    groups: dict[tuple, list[int]] = {}
    for i, rec in enumerate(ds.records):
        groups.setdefault((rec["w_index"], rec["realization"], rec["state"]), []).append(i)
    out = [dict(r) for r in ds.records]
    for (w, r, k), idx in groups.items():
        spec = record_spec(ds.records[idx[0]])
        ham = build_hamiltonian(spec)
        ts = sorted({ds.records[i]["t"] for i in idx})
        psi = evolve_many(ham, initial_state(spec), ts)
        singles, pairs = local_density_matrices(psi, ham.basis, spec.N)
        orders = sorted({ds.records[i]["n"] for i in idx})
        for ti, t in enumerate(ts):
            t_index = times.index(t) if t in times else ti
            feats = noisy_local_features(singles[ti], pairs[ti], sigma,
                                         spawn_seed(seed, w, r, k, t_index), orders, sigma1, sigma2)
            for i in idx:
                if ds.records[i]["t"] == t:
                    out[i]["features"] = [float(v) for v in feats[ds.records[i]["n"]]]
    header = dict(ds.header)
    header["calibration"] = {"sigma": sigma, "sigma1": sigma1, "sigma2": sigma2, "seed": seed,
                             "seed_rule": "spawn_seed(seed, w_index, realization, state, time_index)"}
    return DatasetFile(header, out)
