"""Disordered XXZ chain: Hamiltonian in a magnetization sector and exact quench dynamics.

Conventions
-----------
* Site ``i`` (1-based) is stored in bit ``i - 1`` of a basis-state integer.
* Bit value 0 is the sigma_z = +1 ("up") state, bit value 1 is sigma_z = -1.
* ``n_up`` counts zero bits; it is conserved by the Hamiltonian.
* Open boundary conditions.

Randomness uses NumPy's ``PCG64`` bit generator (see :data:`GENERATOR_ID`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from . import _core

GENERATOR_ID = "numpy.random.PCG64"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_seed(master_seed: int, *path: int) -> int:
    """Derive a 64-bit sub-seed from ``master_seed`` and an integer path.

    The rule is ``SeedSequence(master_seed, spawn_key=path).generate_state(1,
    uint64)[0]``, which is independent of execution order.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class QuenchSpec:
    """One quench: chain size, couplings, disorder fields and the initial pattern."""

    N: int
    Jz: float
    W: float
    fields: tuple[float, ...]
    initial: tuple[int, ...]
    disorder_seed: int | None = None
    state_seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(float(h) for h in self.fields))
        object.__setattr__(self, "initial", tuple(int(b) for b in self.initial))
        if self.N < 2:
            raise ValueError(f"N must be at least 2, got {self.N}")
        if self.W < 0:
            raise ValueError(f"W must be non-negative, got {self.W}")
        if len(self.fields) != self.N:
            raise ValueError(f"expected {self.N} fields, got {len(self.fields)}")
        if len(self.initial) != self.N:
            raise ValueError(f"expected {self.N} initial bits, got {len(self.initial)}")
        if any(b not in (0, 1) for b in self.initial):
            raise ValueError("initial pattern must contain only 0 and 1")
        if any(abs(h) > self.W for h in self.fields):
            raise ValueError("all fields must satisfy |h_i| <= W")

    @property
    def n_up(self) -> int:
        return self.initial.count(0)

    @classmethod
    def from_seeds(cls, N: int, Jz: float, W: float, disorder_seed: int,
                   initial: str | Sequence[int] = "neel", state_seed: int | None = None):
        fields = sample_disorder(W, disorder_seed, N)
        if isinstance(initial, str):
            pattern = make_initial_state(initial, N, 0 if state_seed is None else state_seed)
        else:
            pattern = list(initial)
        return cls(N, Jz, W, tuple(fields), tuple(pattern), disorder_seed, state_seed)


def sample_disorder(W: float, seed: int, N: int) -> np.ndarray:
    """I.i.d. fields uniform on ``[-W, W]`` drawn from ``PCG64(seed)``."""
    if W < 0:
        raise ValueError(f"W must be non-negative, got {W}")
    if N < 1:
        raise ValueError(f"N must be positive, got {N}")
    if W == 0:
        return np.zeros(N)
    return make_rng(seed).uniform(-W, W, size=N)


def make_initial_state(kind: str, N: int, seed: int = 0) -> list[int]:
    """Product-state bit pattern.

    ``"neel"`` gives ``[0, 1, 0, 1, ...]``; ``"random"`` draws i.i.d. fair bits
    from ``PCG64(seed)``.
    """
    if N < 2:
        raise ValueError(f"N must be at least 2, got {N}")
    if kind == "neel":
        return [i % 2 for i in range(N)]
    if kind == "random":
        return [int(b) for b in make_rng(seed).integers(0, 2, size=N)]
    raise ValueError(f"unknown initial state kind {kind!r}")


@lru_cache(maxsize=64)
def _sector(N: int, n_up: int) -> np.ndarray:
    basis = _core.sector_basis(N, N - n_up)
    basis.setflags(write=False)
    return basis


def sector_basis(N: int, n_up: int) -> np.ndarray:
    """Sorted basis-state integers with ``n_up`` zero bits."""
    if not 0 <= n_up <= N:
        raise ValueError(f"n_up must lie in [0, {N}], got {n_up}")
    return _sector(N, n_up)


def pattern_to_int(pattern: Sequence[int]) -> int:
    return sum(int(b) << i for i, b in enumerate(pattern))


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    n_up: int
    N: int

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=np.complex128)
        if amps.shape != (len(sector_basis(self.N, self.n_up)),):
            raise ValueError("amplitude count does not match the sector dimension")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def basis(self) -> np.ndarray:
        return sector_basis(self.N, self.n_up)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def to_full(self) -> np.ndarray:
        """Amplitudes over all ``2**N`` basis states."""
        full = np.zeros(1 << self.N, dtype=np.complex128)
        full[self.basis] = self.amplitudes
        return full

    @classmethod
    def product(cls, pattern: Sequence[int]) -> "StateVector":
        N = len(pattern)
        n_up = list(pattern).count(0)
        basis = sector_basis(N, n_up)
        amps = np.zeros(len(basis), dtype=np.complex128)
        amps[np.searchsorted(basis, pattern_to_int(pattern))] = 1.0
        return cls(amps, n_up, N)


@dataclass(frozen=True, eq=False)
class SectorHamiltonian:
    """Dense Hamiltonian block with its eigendecomposition."""

    N: int
    n_up: int
    basis: np.ndarray
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    spec: QuenchSpec | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.basis)


def sector_matrix(N: int, Jz: float, fields: Sequence[float], n_up: int) -> np.ndarray:
    basis = sector_basis(N, n_up)
    h = np.ascontiguousarray(fields, dtype=np.float64)
    return _core.sector_hamiltonian(np.ascontiguousarray(basis), N, float(Jz), h)


def build_hamiltonian(spec: QuenchSpec, n_up: int | None = None) -> SectorHamiltonian:
    """Sector block of H for the sector of ``spec.initial`` (or ``n_up``)."""
    if n_up is None:
        n_up = spec.n_up
    basis = sector_basis(spec.N, n_up)
    H = sector_matrix(spec.N, spec.Jz, spec.fields, n_up)
    E, V = np.linalg.eigh(H)
    for arr in (H, E, V):
        arr.setflags(write=False)
    return SectorHamiltonian(spec.N, n_up, basis, H, E, V, spec)


def initial_state(spec: QuenchSpec) -> StateVector:
    return StateVector.product(spec.initial)


def _check_sector(ham: SectorHamiltonian, psi: StateVector):
    if psi.N != ham.N or psi.n_up != ham.n_up:
        raise ValueError(
            f"state in sector (N={psi.N}, n_up={psi.n_up}) does not match "
            f"Hamiltonian sector (N={ham.N}, n_up={ham.n_up})"
        )


def evolve(ham: SectorHamiltonian, psi0: StateVector, t: float) -> StateVector:
    """``exp(-i H t) psi0`` through the stored spectral decomposition."""
    _check_sector(ham, psi0)
    V = ham.eigenvectors
    coeffs = V.T @ psi0.amplitudes
    amps = V @ (np.exp(-1j * ham.eigenvalues * t) * coeffs)
    return StateVector(amps, ham.n_up, ham.N)


def evolve_many(ham: SectorHamiltonian, psi0: StateVector, times: Sequence[float]) -> np.ndarray:
    """Amplitudes at every time in ``times``, shape ``(len(times), dim)``."""
    _check_sector(ham, psi0)
    V = ham.eigenvectors
    coeffs = V.T @ psi0.amplitudes
    phases = np.exp(-1j * np.outer(np.asarray(times, dtype=float), ham.eigenvalues))
    return np.ascontiguousarray((phases * coeffs) @ V.T)


def energy(ham: SectorHamiltonian, psi: StateVector) -> float:
    _check_sector(ham, psi)
    a = psi.amplitudes
    return float(np.real(np.vdot(a, ham.matrix @ a)))


def magnetization(psi: StateVector) -> float:
    """Expectation of sum_i I_{i,z} = (n_up - n_down) / 2 weighted by amplitudes."""
    bits = (psi.basis[:, None] >> np.arange(psi.N)) & 1
    sz = 0.5 * np.sum(1 - 2 * bits, axis=1)
    return float(np.sum(np.abs(psi.amplitudes) ** 2 * sz))
