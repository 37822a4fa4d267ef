"""Sample generation (quench -> irreducible-entropy features + mutual-information labels),
JSON Lines persistence and disorder averaging.

File layout: the first line is a header object (``"type": "header"``) carrying
the generator id, master seed, effective configuration, partition and the
feature ordering; every following line is one sample record.

Seeds: realization ``r`` at disorder index ``w`` uses
``spawn_seed(master_seed, w, r, 0)`` for the fields and
``spawn_seed(master_seed, w, r, 1, k)`` for its ``k``-th random initial state.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Iterable, Iterator, Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .entropy import local_density_matrices, renyi_batch, renyi_from_spectrum
from .spinchain import (
    GENERATOR_ID,
    QuenchSpec,
    StateVector,
    build_hamiltonian,
    evolve_many,
    initial_state,
    spawn_seed,
)

FORMAT_VERSION = "qmilearn-dataset/1"

RECORD_KEYS = (
    "w_index", "realization", "state", "N", "Jz", "W", "disorder_seed", "state_seed",
    "fields", "initial", "t", "n", "features", "label",
)


class DatasetError(ValueError):
    """Malformed dataset file or record."""


class DatasetIOError(OSError):
    """Reading or writing a dataset failed at a specific record."""


# feature layout

def feature_clusters(N: int) -> list[tuple[int, ...]]:
    """Sites ascending, then pairs lexicographic (1-based)."""
    return [(i,) for i in range(1, N + 1)] + list(combinations(range(1, N + 1), 2))


def feature_length(N: int) -> int:
    return N + N * (N - 1) // 2


def irreducible_features(singles: np.ndarray, pairs: np.ndarray, n: int) -> np.ndarray:
    """Irreducible entropies of all 1- and 2-clusters from local density matrices.

    ``singles`` is ``(..., N, 2, 2)`` and ``pairs`` ``(..., N(N-1)/2, 4, 4)``.
    """
    s1 = renyi_batch(singles, n)
    s2 = renyi_batch(pairs, n)
    N = s1.shape[-1]
    iu, ju = np.triu_indices(N, k=1)
    irr2 = s2 - s1[..., iu] - s1[..., ju]
    return np.concatenate([s1, irr2], axis=-1)


def feature_vector(state: StateVector, n: int) -> np.ndarray:
    singles, pairs = local_density_matrices(state.amplitudes[None, :], state.basis, state.N)
    return irreducible_features(singles, pairs, n)[0]


def half_partition(N: int) -> tuple[list[int], list[int]]:
    h = N // 2
    return list(range(1, h + 1)), list(range(h + 1, N + 1))


def _split_batch(psi: np.ndarray, basis: np.ndarray, N: int, A: Sequence[int]) -> np.ndarray:
    T = psi.shape[0]
    full = np.zeros((T, 1 << N), dtype=np.complex128)
    full[:, basis] = psi
    keep = [N - s for s in A]
    rest = [k for k in range(N) if k not in keep]
    tens = full.reshape((T,) + (2,) * N)
    tens = np.transpose(tens, [0] + [k + 1 for k in keep] + [k + 1 for k in rest])
    return tens.reshape(T, 1 << len(keep), -1)


def qmi_labels(psi: np.ndarray, basis: np.ndarray, N: int, A: Sequence[int],
               B: Sequence[int], orders: Sequence[int]) -> dict[int, np.ndarray]:
    """Exact mutual information for each row of ``psi`` (pure global state)."""
    lam_a = np.linalg.svd(_split_batch(psi, basis, N, A), compute_uv=False) ** 2
    lam_b = np.linalg.svd(_split_batch(psi, basis, N, B), compute_uv=False) ** 2
    return {n: renyi_from_spectrum(lam_a, n) + renyi_from_spectrum(lam_b, n) for n in orders}


def quench_samples(spec: QuenchSpec, times: Sequence[float], orders: Sequence[int],
                   A: Sequence[int] | None = None, B: Sequence[int] | None = None):
    """Features and labels along one quench.

    Returns ``{n: (features (T, F), labels (T,))}``.
    """
    if A is None or B is None:
        A, B = half_partition(spec.N)
    ham = build_hamiltonian(spec)
    psi = evolve_many(ham, initial_state(spec), times)
    singles, pairs = local_density_matrices(psi, ham.basis, spec.N)
    labels = qmi_labels(psi, ham.basis, spec.N, A, B, orders)
    return {n: (irreducible_features(singles, pairs, n), labels[n]) for n in orders}


# configuration

class TimeGrid(BaseModel):
    model_config = ConfigDict(extra="forbid")

    t_min: float = 0.1
    t_max: float = 200.0
    points: int = 41
    include_zero: bool = True
    spacing: Literal["log", "linear"] = "log"

    def values(self) -> list[float]:
        if self.spacing == "log":
            ts = np.logspace(math.log10(self.t_min), math.log10(self.t_max), self.points)
        else:
            ts = np.linspace(self.t_min, self.t_max, self.points)
        out = [float(t) for t in ts]
        return ([0.0] if self.include_zero else []) + out


class DatasetConfig(BaseModel):
    """What to simulate: one chain size, one anisotropy, one or more disorder strengths."""

    model_config = ConfigDict(extra="forbid")

    N: int = Field(ge=2, le=14)
    Jz: float = 1.0
    W: list[float] = Field(min_length=1)
    realizations: int = Field(ge=1)
    initial: Literal["neel", "random"] = "neel"
    states_per_realization: int = Field(default=1, ge=1)
    times: list[float] | TimeGrid = Field(default_factory=TimeGrid)
    A: list[int] | None = None
    B: list[int] | None = None
    orders: list[int] = Field(default_factory=lambda: [2], min_length=1)
    master_seed: int = Field(default=0, ge=0, lt=2**64)

    @field_validator("W", mode="before")
    @classmethod
    def _scalar_w(cls, v):
        return [v] if isinstance(v, (int, float)) else v

    @field_validator("W")
    @classmethod
    def _nonneg_w(cls, v):
        if any(w < 0 for w in v):
            raise ValueError("disorder strengths must be non-negative")
        return v

    @field_validator("orders")
    @classmethod
    def _orders(cls, v):
        if any(n < 1 for n in v):
            raise ValueError("Renyi orders must be >= 1")
        return v

    @model_validator(mode="after")
    def _partition(self):
        if (self.A is None) != (self.B is None):
            raise ValueError("give both A and B or neither")
        if self.A is None:
            self.A, self.B = half_partition(self.N)
        if set(self.A) & set(self.B) or set(self.A) | set(self.B) != set(range(1, self.N + 1)):
            raise ValueError("A and B must partition the sites 1..N")
        return self

    def time_values(self) -> list[float]:
        return list(self.times) if isinstance(self.times, list) else self.times.values()

    def jobs(self) -> list[tuple[int, int]]:
        return [(w, r) for w in range(len(self.W)) for r in range(self.realizations)]

    def records_per_job(self) -> int:
        return self.states_per_realization * len(self.time_values()) * len(self.orders)


# generation

@dataclass
class DatasetFile:
    header: dict
    records: list[dict] = field(default_factory=list)

    @property
    def config(self) -> DatasetConfig:
        return DatasetConfig.model_validate(self.header["config"])

    def select(self, **match) -> list[dict]:
        return [r for r in self.records if all(r[k] == v for k, v in match.items())]

    def arrays(self, n: int | None = None):
        recs = self.records if n is None else [r for r in self.records if r["n"] == n]
        X = np.array([r["features"] for r in recs], dtype=float)
        y = np.array([r["label"] for r in recs], dtype=float)
        return X, y


def make_header(cfg: DatasetConfig) -> dict:
    return {
        "type": "header",
        "version": FORMAT_VERSION,
        "generator": GENERATOR_ID,
        "seed_rule": "SeedSequence(master_seed, spawn_key=(w_index, realization, 0 | 1, state))",
        "master_seed": cfg.master_seed,
        "config": cfg.model_dump(mode="json"),
        "partition": {"A": cfg.A, "B": cfg.B},
        "times": cfg.time_values(),
        "feature_clusters": [list(c) for c in feature_clusters(cfg.N)],
        "site_convention": "site i is bit i-1; bit 0 is sigma_z=+1",
    }


def job_specs(cfg: DatasetConfig, w_index: int, realization: int) -> list[QuenchSpec]:
    W = cfg.W[w_index]
    dseed = spawn_seed(cfg.master_seed, w_index, realization, 0)
    specs = []
    for k in range(cfg.states_per_realization):
        if cfg.initial == "neel":
            sseed = None
        else:
            sseed = spawn_seed(cfg.master_seed, w_index, realization, 1, k)
        specs.append(QuenchSpec.from_seeds(cfg.N, cfg.Jz, W, dseed, cfg.initial, sseed))
    return specs


def run_job(cfg: DatasetConfig, w_index: int, realization: int) -> list[dict]:
    times = cfg.time_values()
    out = []
    for k, spec in enumerate(job_specs(cfg, w_index, realization)):
        per_n = quench_samples(spec, times, cfg.orders, cfg.A, cfg.B)
        for ti, t in enumerate(times):
            for n in cfg.orders:
                X, y = per_n[n]
                out.append({
                    "w_index": w_index,
                    "realization": realization,
                    "state": k,
                    "N": spec.N,
                    "Jz": spec.Jz,
                    "W": spec.W,
                    "disorder_seed": spec.disorder_seed,
                    "state_seed": spec.state_seed,
                    "fields": list(spec.fields),
                    "initial": list(spec.initial),
                    "t": float(t),
                    "n": int(n),
                    "features": [float(v) for v in X[ti]],
                    "label": float(y[ti]),
                })
    return out


def _run_job_args(args):
    cfg_json, w, r = args
    return run_job(DatasetConfig.model_validate_json(cfg_json), w, r)


def dumps(obj) -> str:
    # repr-based float formatting round-trips exactly
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _iter_job_records(cfg: DatasetConfig, jobs: list[tuple[int, int]], threads: int) -> Iterator[list[dict]]:
    if threads <= 1 or len(jobs) <= 1:
        for w, r in jobs:
            yield run_job(cfg, w, r)
        return
    cfg_json = cfg.model_dump_json()
    with ProcessPoolExecutor(max_workers=threads) as pool:
        # map yields in submission order, independent of completion order
        yield from pool.map(_run_job_args, [(cfg_json, w, r) for w, r in jobs])


def generate(cfg: DatasetConfig, path: str | os.PathLike | None = None, threads: int = 1,
             resume: bool = True, progress: Callable[[int, int], None] | None = None) -> DatasetFile:
    """Simulate every (disorder strength, realization) job of ``cfg``.

    With ``path`` the records are streamed to a JSON Lines file. If the file
    already holds a prefix of completed jobs from the same configuration it is
    kept and generation resumes after it.
    """
    header = make_header(cfg)
    jobs = cfg.jobs()
    per_job = cfg.records_per_job()
    records: list[dict] = []
    if path is None:
        for i, recs in enumerate(_iter_job_records(cfg, jobs, threads)):
            records.extend(recs)
            if progress:
                progress(i + 1, len(jobs))
        return DatasetFile(header, records)

    path = os.fspath(path)
    done = 0
    if resume and os.path.exists(path):
        done, records = _completed_prefix(path, header, per_job)
    mode = "a" if done else "w"
    written = len(records)
    try:
        with open(path, mode, encoding="utf-8") as fh:
            if not done:
                fh.write(dumps(header) + "\n")
            for i, recs in enumerate(_iter_job_records(cfg, jobs[done:], threads), start=done):
                for rec in recs:
                    fh.write(dumps(rec) + "\n")
                    written += 1
                fh.flush()
                records.extend(recs)
                if progress:
                    progress(i + 1, len(jobs))
    except OSError as exc:
        raise DatasetIOError(f"writing record {written} of {path} failed: {exc}") from exc
    return DatasetFile(header, records)


def _completed_prefix(path: str, header: dict, per_job: int) -> tuple[int, list[dict]]:
    """Number of complete jobs already on disk; truncates any partial tail."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError:
        return 0, []
    if not lines:
        return 0, []
    try:
        old = json.loads(lines[0])
    except json.JSONDecodeError:
        return 0, []
    if old != header:
        return 0, []
    good = []
    for line in lines[1:]:
        try:
            good.append(json.loads(line))
        except json.JSONDecodeError:
            break
    n_jobs = len(good) // per_job
    keep = good[: n_jobs * per_job]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(lines[0])
        for line in lines[1: 1 + len(keep)]:
            fh.write(line)
    return n_jobs, keep


# reading and writing

def validate_record(rec: dict, N: int, index: int):
    missing = [k for k in RECORD_KEYS if k not in rec]
    if missing:
        raise DatasetError(f"record {index}: missing keys {missing}")
    if len(rec["features"]) != feature_length(N):
        raise DatasetError(f"record {index}: expected {feature_length(N)} features, got {len(rec['features'])}")
    if len(rec["fields"]) != N or len(rec["initial"]) != N:
        raise DatasetError(f"record {index}: fields/initial length differs from N={N}")
    if not all(math.isfinite(v) for v in rec["features"]) or not math.isfinite(rec["label"]):
        raise DatasetError(f"record {index}: non-finite value")


def write_dataset(ds: DatasetFile, path: str | os.PathLike):
    i = -1
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(dumps(ds.header) + "\n")
            for i, rec in enumerate(ds.records):
                fh.write(dumps(rec) + "\n")
    except OSError as exc:
        raise DatasetIOError(f"writing record {i + 1} of {path} failed: {exc}") from exc


def read_dataset(path: str | os.PathLike) -> DatasetFile:
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DatasetIOError(f"cannot open {path}: {exc}") from exc
    with fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: header line is not valid JSON") from exc
        if header.get("type") != "header" or header.get("version") != FORMAT_VERSION:
            raise DatasetError(f"{path}: missing or unsupported header (version {header.get('version')!r})")
        N = header["config"]["N"]
        records = []
        for i, line in enumerate(fh):
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: record {i} is not valid JSON") from exc
            validate_record(rec, N, i)
            records.append(rec)
    return DatasetFile(header, records)


def record_spec(rec: dict) -> QuenchSpec:
    return QuenchSpec(rec["N"], rec["Jz"], rec["W"], tuple(rec["fields"]), tuple(rec["initial"]),
                      rec["disorder_seed"], rec["state_seed"])


def payload_digest(path: str | os.PathLike) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# disorder averaging and curve export

CURVE_COLUMNS = ("t", "W", "Jz", "n", "mean", "stderr", "source")


def disorder_average(records: Iterable[dict], keys: Sequence[str] = ("W", "Jz", "n", "t"),
                     value: Callable[[dict], float] | None = None) -> list[dict]:
    """Mean and standard error per group; by default of ``label / N``.

    The standard error is the sample standard deviation (ddof=1) over the
    square root of the group size; it is NaN for a single-record group.
    """
    if value is None:
        value = lambda r: r["label"] / r["N"]  # noqa: E731
    groups: dict[tuple, list[float]] = {}
    for rec in records:
        groups.setdefault(tuple(rec[k] for k in keys), []).append(float(value(rec)))
    if not groups:
        raise ValueError("no records to average")
    out = []
    for key in sorted(groups):
        vals = np.asarray(groups[key])
        stderr = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.nan
        out.append({
            **dict(zip(keys, key)),
            "mean": float(vals.mean()),
            "stderr": stderr,
            "count": len(vals),
        })
    return out


def write_curves(rows: Iterable[dict], path_or_buf, provenance: dict | None = None):
    """CSV with columns ``t, W, Jz, n, mean, stderr, source``.

    ``provenance`` is echoed as a leading ``#`` comment line.
    """
    own = isinstance(path_or_buf, (str, os.PathLike))
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        if provenance is not None:
            fh.write("# " + dumps(provenance) + "\n")
        writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if own:
            fh.close()


def read_curves(path_or_text: str) -> list[dict]:
    if os.path.exists(path_or_text):
        with open(path_or_text, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = path_or_text
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(io.StringIO("\n".join(lines))))
    for row in rows:
        for k in ("t", "W", "Jz", "mean", "stderr"):
            row[k] = float(row[k])
        row["n"] = int(row["n"])
    return rows
