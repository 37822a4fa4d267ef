"""Cluster-correlation expansion of the mutual information across a cut."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Mapping, Sequence

import numpy as np

from .entropy import (
    _split_matrix,
    renyi_from_spectrum,
)
from .spinchain import StateVector

Cluster = tuple[int, ...]


def make_cluster(sites: Sequence[int], N: int | None = None) -> Cluster:
    c = tuple(sorted(int(s) for s in sites))
    if not c:
        raise ValueError("cluster must be nonempty")
    if len(set(c)) != len(c):
        raise ValueError(f"duplicate sites in cluster {c}")
    if c[0] < 1 or (N is not None and c[-1] > N):
        raise ValueError(f"cluster {c} outside 1..{N}")
    return c


def is_contiguous(cluster: Cluster) -> bool:
    return cluster[-1] - cluster[0] == len(cluster) - 1


def crossing_clusters(N: int, A: Sequence[int], B: Sequence[int], L_max: int,
                      contiguous: bool = False) -> list[Cluster]:
    """Clusters of size 2..L_max meeting both ``A`` and ``B``.

    Ordered by size, then lexicographically. With ``contiguous=True`` only
    runs of adjacent sites are kept.
    """
    if L_max < 2:
        raise ValueError(f"L_max must be at least 2, got {L_max}")
    A, B = set(A), set(B)
    if A & B:
        raise ValueError("A and B overlap")
    if A | B != set(range(1, N + 1)):
        raise ValueError("A and B must partition 1..N")
    out = []
    for L in range(2, min(L_max, N) + 1):
        for c in combinations(range(1, N + 1), L):
            if A.isdisjoint(c) or B.isdisjoint(c):
                continue
            if contiguous and not is_contiguous(c):
                continue
            out.append(c)
    return out


@dataclass
class IrreducibleEntropyMap:
    """Irreducible entropies keyed by sorted site tuple, for one Renyi order."""

    n: int
    L_max: int
    values: dict[Cluster, float] = field(default_factory=dict)

    def __getitem__(self, cluster) -> float:
        return self.values[make_cluster(cluster)]

    def __len__(self):
        return len(self.values)


class ClusterEntropies:
    """Raw Renyi entropies of arbitrary clusters of one pure state, memoized."""

    def __init__(self, state: StateVector):
        self.state = state
        self._full = state.to_full()
        self._cache: dict[tuple[Cluster, int], float] = {}

    def __call__(self, cluster: Cluster, n: int) -> float:
        key = (cluster, n)
        if key not in self._cache:
            M = _split_matrix(self._full, self.state.N, cluster)
            if M.shape[0] <= M.shape[1]:
                lam = np.linalg.eigvalsh(M @ M.conj().T)
            else:
                lam = np.linalg.svd(M, compute_uv=False) ** 2
            self._cache[key] = float(renyi_from_spectrum(lam, n))
        return self._cache[key]


def irreducible_entropies(
    source: StateVector | Mapping[Cluster, float] | Callable[[Cluster], float],
    L_max: int,
    n: int,
    sites: Sequence[int] | None = None,
) -> IrreducibleEntropyMap:
    """Irreducible entropies of every cluster of size <= ``L_max``.

    Each cluster's value is its raw entropy minus the irreducible values of all
    its proper nonempty sub-clusters; single sites keep their raw entropy.
    ``source`` is a state, a mapping from sorted cluster tuples to raw
    entropies, or a callable returning the raw entropy of a cluster.
    """
    if isinstance(source, StateVector):
        ent = ClusterEntropies(source)
        raw = lambda c: ent(c, n)  # noqa: E731
        N = source.N
    elif callable(source) and not isinstance(source, Mapping):
        raw = source
        N = None
    else:
        table = {make_cluster(k): float(v) for k, v in source.items()}
        N = max(c[-1] for c in table)

        def raw(c):
            try:
                return table[c]
            except KeyError:
                raise KeyError(f"no raw entropy for cluster {c}") from None

    if sites is None:
        if N is None:
            raise ValueError("sites must be given when source is a callable")
        sites = range(1, N + 1)
    sites = sorted(int(s) for s in sites)

    out = IrreducibleEntropyMap(n, L_max)
    vals = out.values
    for L in range(1, min(L_max, len(sites)) + 1):
        for c in combinations(sites, L):
            s = raw(c)
            for M in range(1, L):
                for sub in combinations(c, M):
                    s -= vals[sub]
            vals[c] = s
    return out


def cce_estimate(imap: IrreducibleEntropyMap, A: Sequence[int], B: Sequence[int],
                 L_max: int, contiguous: bool = False) -> float:
    """Truncated expansion: minus the sum of irreducible entropies of crossing clusters."""
    if L_max > imap.L_max:
        raise ValueError(f"map only holds clusters up to size {imap.L_max}")
    N = len(A) + len(B)
    total = 0.0
    for c in crossing_clusters(N, A, B, L_max, contiguous=contiguous):
        total += imap.values[c]
    return -total


def cce_qmi(state: StateVector, A: Sequence[int], B: Sequence[int], L_max: int,
            n: int, contiguous: bool = False) -> float:
    """CCE-``L_max`` estimate of the mutual information of ``state``."""
    imap = irreducible_entropies(state, L_max, n)
    return cce_estimate(imap, A, B, L_max, contiguous=contiguous)
