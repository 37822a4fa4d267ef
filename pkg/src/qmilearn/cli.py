"""Command-line pipeline: generate, train, predict, evaluate, cce, calibrate, sweep.

Exit codes: 0 success, 2 configuration or input-schema error, 3 I/O error.
Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
import warnings

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from . import __version__
from .calibrate import calibrate_dataset
from .cce import cce_qmi
from .dataset import (
    DatasetConfig,
    DatasetError,
    DatasetIOError,
    disorder_average,
    generate,
    read_dataset,
    record_spec,
    write_curves,
    write_dataset,
)
from .mlp import (
    ModelFormatError,
    TrainConfig,
    forward,
    load_model,
    r_squared,
    save_model,
    train_dataset,
)
from .spinchain import build_hamiltonian, evolve_many, initial_state, StateVector

EXIT_CONFIG = 2
EXIT_IO = 3


class ConfigError(ValueError):
    pass


class TrainSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    min_delta: float = 1e-5
    weight_decay: float = 4e-3
    threshold: float = 0.03
    eta: float = 0.7
    train_fraction: float = 0.8
    seed: int = 0
    hidden: list[int] = [512, 32]
    threshold_per_site: bool = False

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(**self.model_dump())


class OutputSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: str | None = None
    model: str | None = None
    history: str | None = None
    curves: str | None = None


class RunConfig(DatasetConfig):
    """Dataset parameters plus training, noise and output settings."""

    train: TrainSection = TrainSection()
    noise_sigma: float = 0.0
    noise_seed: int = 0
    output: OutputSection = OutputSection()

    def dataset_config(self) -> DatasetConfig:
        keys = DatasetConfig.model_fields.keys()
        return DatasetConfig.model_validate({k: getattr(self, k) for k in keys})


def _format_validation(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def load_run_config(path: str, overrides: dict | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


def _say(msg: str):
    print(msg, flush=True)


# commands

def cmd_generate(args) -> int:
    overrides = {"N": args.N, "Jz": args.Jz, "realizations": args.realizations,
                 "master_seed": args.seed, "W": _float_list(args.W) if args.W else None}
    cfg = load_run_config(args.config, overrides)
    out = args.out or cfg.output.dataset
    if not out:
        raise ConfigError("output.dataset: no output path given (use --out)")
    t0 = time.perf_counter()
    ds = generate(cfg.dataset_config(), out, threads=_threads(args), resume=not args.no_resume)
    _say(f"wrote {len(ds.records)} records to {out} in {time.perf_counter() - t0:.2f} s")
    if cfg.noise_sigma > 0:
        root, ext = os.path.splitext(out)
        noisy_path = f"{root}-noisy{ext}"
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            noisy = calibrate_dataset(ds, cfg.noise_sigma, cfg.noise_seed)
        write_dataset(noisy, noisy_path)
        _say(f"wrote noise-corrected copy (sigma={cfg.noise_sigma}) to {noisy_path}")
    return 0


def _train_config(args) -> TrainConfig:
    section = TrainSection()
    if args.config:
        section = load_run_config(args.config).train
    doc = section.model_dump()
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.max_epochs is not None:
        doc["max_epochs"] = args.max_epochs
    return TrainConfig(**doc)


def cmd_train(args) -> int:
    ds = read_dataset(args.data)
    cfg = _train_config(args)
    t0 = time.perf_counter()
    model, hist = train_dataset(ds, args.n, cfg)
    model.metadata["dataset_header"] = {k: ds.header[k] for k in ("generator", "master_seed", "config")}
    save_model(model, args.out)
    if args.history:
        hist.write_csv(args.history)
    best = hist.epochs[hist.best_epoch]
    _say(json.dumps({"model": args.out, "epochs": len(hist.epochs), "best_epoch": hist.best_epoch,
                     "test_loss": best["test_loss"], "test_r2": best["test_r2"],
                     "seconds": round(time.perf_counter() - t0, 3)}))
    return 0


def _predicted_records(model, records):
    X = np.array([r["features"] for r in records], dtype=float)
    pred = forward(model, X) if len(X) else np.zeros(0)
    return [dict(r, label=float(p)) for r, p in zip(records, pred)], pred


def _model_records(model, ds):
    n = model.metadata.get("n")
    recs = [r for r in ds.records if n is None or r["n"] == n]
    if not recs:
        raise DatasetError(f"dataset has no records with n={n}")
    return recs


def _curves(records, source):
    rows = disorder_average(records, keys=("W", "Jz", "n", "t"))
    for row in rows:
        row["source"] = source
    return rows


def cmd_predict(args) -> int:
    model = load_model(args.model)
    ds = read_dataset(args.data)
    recs = _model_records(model, ds)
    pred_recs, _ = _predicted_records(model, recs)
    rows = _curves(recs, "exact") + _curves(pred_recs, "mlp")
    write_curves(rows, args.out or sys.stdout, provenance={"command": "predict", "model": args.model,
                                                           "dataset": ds.header["config"]})
    return 0


def cmd_evaluate(args) -> int:
    model = load_model(args.model)
    ds = read_dataset(args.data)
    recs = _model_records(model, ds)
    pred_recs, pred = _predicted_records(model, recs)
    true = np.array([r["label"] for r in recs])
    try:
        r2 = r_squared(pred, true)
    except ValueError:
        r2 = None
    exact = {(r["W"], r["Jz"], r["n"], r["t"]): r for r in _curves(recs, "exact")}
    groups: dict = {}
    for row in _curves(pred_recs, "mlp"):
        key = (row["W"], row["Jz"], row["n"])
        diff = abs(row["mean"] - exact[key + (row["t"],)]["mean"])
        groups[key] = max(groups.get(key, 0.0), diff)
    report = {"r2": r2, "samples": len(recs),
              "groups": [{"W": k[0], "Jz": k[1], "n": k[2], "max_abs_diff_per_site": v}
                         for k, v in sorted(groups.items())]}
    _say(json.dumps(report))
    return 0


def cmd_cce(args) -> int:
    ds = read_dataset(args.data)
    cfg = ds.config
    A, B = ds.header["partition"]["A"], ds.header["partition"]["B"]
    lmax = cfg.N if args.lmax == "N" else int(args.lmax)
    if lmax < 2:
        raise ConfigError("--lmax must be at least 2")
    source = f"cce{lmax}" if args.lmax != "N" else "cceN"
    cce_recs = []
    groups: dict[tuple, list[dict]] = {}
    for rec in ds.records:
        groups.setdefault((rec["w_index"], rec["realization"], rec["state"]), []).append(rec)
    for recs in groups.values():
        spec = record_spec(recs[0])
        ham = build_hamiltonian(spec)
        ts = sorted({r["t"] for r in recs})
        psi = evolve_many(ham, initial_state(spec), ts)
        for r in recs:
            state = StateVector(psi[ts.index(r["t"])], ham.n_up, spec.N)
            est = cce_qmi(state, A, B, lmax, r["n"], contiguous=args.contiguous)
            cce_recs.append(dict(r, label=est))
    rows = _curves(ds.records, "exact") + _curves(cce_recs, source)
    write_curves(rows, args.out or sys.stdout, provenance={"command": "cce", "lmax": lmax,
                                                           "contiguous": args.contiguous,
                                                           "dataset": ds.header["config"]})
    return 0


def cmd_calibrate(args) -> int:
    if args.sigma < 0:
        raise ConfigError("--sigma must be non-negative")
    ds = read_dataset(args.data)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        noisy = calibrate_dataset(ds, args.sigma, args.seed, args.sigma1, args.sigma2)
    write_dataset(noisy, args.out)
    _say(f"wrote {len(noisy.records)} corrected records to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    model = load_model(args.model)
    n = model.metadata.get("n", 2)
    N = args.N or model.metadata.get("N")
    if N is None:
        raise ConfigError("chain size unknown: pass --N")
    try:
        cfg = DatasetConfig(N=N, Jz=args.Jz, W=_float_list(args.W), realizations=args.realizations,
                            initial=args.initial, times=[args.t], orders=[n], master_seed=args.seed)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc
    ds = generate(cfg, threads=_threads(args))
    pred_recs, _ = _predicted_records(model, ds.records)
    rows = _curves(ds.records, "exact") + _curves(pred_recs, "mlp")
    write_curves(rows, args.out or sys.stdout, provenance={"command": "sweep", "model": args.model,
                                                           "config": cfg.model_dump(mode="json")})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmilearn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"qmilearn {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=0, help="worker processes (default: all cores)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="simulate quenches and write a dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out")
    g.add_argument("--N", type=int)
    g.add_argument("--Jz", type=float)
    g.add_argument("--W", help="comma-separated disorder strengths")
    g.add_argument("--realizations", type=int)
    g.add_argument("--seed", type=int, help="master seed")
    g.add_argument("--no-resume", action="store_true")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train a model on one Renyi order")
    t.add_argument("--data", required=True)
    t.add_argument("--n", type=int, default=2)
    t.add_argument("--out", required=True)
    t.add_argument("--config", help="run config whose 'train' section is used")
    t.add_argument("--history", help="CSV of per-epoch losses")
    t.add_argument("--seed", type=int)
    t.add_argument("--max-epochs", type=int)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", parents=[common], help="disorder-averaged exact and predicted curves")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("evaluate", parents=[common], help="R^2 and the largest curve deviation per group")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data", required=True)
    ev.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("cce", parents=[common], help="cluster-expansion baseline curves")
    c.add_argument("--data", required=True)
    c.add_argument("--lmax", default="2", help="2, 4, ... or N")
    c.add_argument("--contiguous", action="store_true", help="only lattice-contiguous clusters")
    c.add_argument("--out")
    c.set_defaults(func=cmd_cce)

    cal = sub.add_parser("calibrate", parents=[common], help="noisy-then-corrected features for a dataset")
    cal.add_argument("--data", required=True)
    cal.add_argument("--sigma", type=float, required=True)
    cal.add_argument("--seed", type=int, default=0)
    cal.add_argument("--sigma1", type=float)
    cal.add_argument("--sigma2", type=float)
    cal.add_argument("--out", required=True)
    cal.set_defaults(func=cmd_calibrate)

    sw = sub.add_parser("sweep", parents=[common], help="exact and predicted values at one time versus W")
    sw.add_argument("--model", required=True)
    sw.add_argument("--t", type=float, default=1e9)
    sw.add_argument("--W", default="1,2,3,4,8")
    sw.add_argument("--Jz", type=float, default=1.0)
    sw.add_argument("--N", type=int)
    sw.add_argument("--realizations", type=int, default=20)
    sw.add_argument("--initial", default="neel", choices=["neel", "random"])
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--out")
    sw.set_defaults(func=cmd_sweep)
    return p


def _fail(kind: str, exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, ModelFormatError) as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except ValidationError as exc:
        return _fail("config", ConfigError(_format_validation(exc)), EXIT_CONFIG)
    except (DatasetIOError, OSError) as exc:
        return _fail("io", exc, EXIT_IO)


if __name__ == "__main__":
    sys.exit(main())
