"""Feed-forward regressor written directly in NumPy (float64).

Architecture ``[F, 512, 32, 1]`` with GELU hidden activations, min-max input
normalization from the training split and an affine output denormalization.
Trained with a hybrid absolute/squared loss, AdamW and early stopping.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf

from .spinchain import make_rng, spawn_seed

MODEL_FORMAT = "qmilearn-mlp"
MODEL_VERSION = 1

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class ModelFormatError(ValueError):
    """Model file does not match the expected schema or version."""


class TrainingError(RuntimeError):
    pass


def gelu(x):
    """``x * (1 + erf(x / sqrt 2)) / 2`` (exact form, no tanh approximation)."""
    x = np.asarray(x, dtype=float)
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    x = np.asarray(x, dtype=float)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


@dataclass
class TrainConfig:
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
    hidden: tuple[int, ...] = (512, 32)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # multiply the loss threshold by N, i.e. apply it to labels divided by N
    threshold_per_site: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        positive = ("lr", "batch_size", "max_epochs", "patience", "min_delta", "threshold")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    x_min: np.ndarray
    x_scale: np.ndarray
    y_min: float = 0.0
    y_scale: float = 1.0
    activation: str = "gelu"
    metadata: dict = field(default_factory=dict)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                        self.x_min.copy(), self.x_scale.copy(), self.y_min, self.y_scale,
                        self.activation, dict(self.metadata))

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def normalize(self, X):
        return (np.asarray(X, dtype=float) - self.x_min) / self.x_scale

    def denormalize_y(self, z):
        return self.y_min + self.y_scale * z

    def normalize_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_min) / self.y_scale


def init_model(dims: Sequence[int], seed: int) -> MlpModel:
    """Glorot-uniform weights, zero biases, identity normalization."""
    rng = make_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases, np.zeros(dims[0]), np.ones(dims[0]))


def _layers(model: MlpModel, X):
    a = model.normalize(X)
    acts, pre = [a], []
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        pre.append(z)
        a = z if k == last else gelu(z)
        acts.append(a)
    return acts, pre


def forward(model: MlpModel, X) -> np.ndarray:
    """Predictions for a feature matrix ``(B, F)`` or a single vector."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.shape[1] != model.dims[0]:
        raise ValueError(f"expected {model.dims[0]} features, got {X2.shape[1]}")
    acts, _ = _layers(model, X2)
    y = model.denormalize_y(acts[-1][:, 0])
    return y[0] if single else y


def hybrid_loss(pred, true, threshold: float = 0.03, eta: float = 0.7) -> float:
    """``[(1-eta) sum_small |r| + eta sum_large r^2] / batch``; groups split on ``true < threshold``."""
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    if pred.shape != true.shape:
        raise ValueError("pred and true differ in length")
    if true.size == 0:
        raise ValueError("empty batch")
    r = pred - true
    small = true < threshold
    return float(((1 - eta) * np.abs(r[small]).sum() + eta * np.square(r[~small]).sum()) / true.size)


def hybrid_loss_grad(pred, true, threshold: float = 0.03, eta: float = 0.7) -> np.ndarray:
    r = np.asarray(pred, dtype=float) - np.asarray(true, dtype=float)
    small = np.asarray(true) < threshold
    g = np.where(small, (1 - eta) * np.sign(r), 2 * eta * r)
    return g / r.size


def gradients(model: MlpModel, X, y, threshold: float = 0.03, eta: float = 0.7):
    """Loss and its analytic gradient for every weight and bias.

    Returns ``(loss, grads)`` with ``grads`` ordered like :meth:`MlpModel.params`.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    acts, pre = _layers(model, X)
    pred = model.denormalize_y(acts[-1][:, 0])
    loss = hybrid_loss(pred, y, threshold, eta)
    delta = (hybrid_loss_grad(pred, y, threshold, eta) * model.y_scale)[:, None]
    grads: list[np.ndarray] = []
    for k in range(len(model.weights) - 1, -1, -1):
        if k < len(model.weights) - 1:
            delta = delta * gelu_grad(pre[k])
        grads.append(delta.sum(axis=0))
        grads.append(acts[k].T @ delta)
        if k:
            delta = delta @ model.weights[k].T
    grads.reverse()
    return loss, grads


def r_squared(pred, true) -> float:
    pred = np.asarray(pred, dtype=float)
    true = np.asarray(true, dtype=float)
    if true.size < 2:
        raise ValueError("R^2 needs at least two points")
    ss_tot = float(np.sum((true - true.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined for zero-variance targets")
    return 1.0 - float(np.sum((true - pred) ** 2)) / ss_tot


def _safe_r2(pred, true) -> float:
    try:
        return r_squared(pred, true)
    except ValueError:
        return float("nan")


@dataclass
class History:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    threads: str = ""

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "test_loss", "test_r2"])
            for e in self.epochs:
                w.writerow([e["epoch"], repr(e["train_loss"]), repr(e["test_loss"]), repr(e["test_r2"])])


def split_indices(n_samples: int, train_fraction: float, seed: int):
    perm = make_rng(spawn_seed(seed, 0)).permutation(n_samples)
    n_train = int(round(train_fraction * n_samples))
    return perm[:n_train], perm[n_train:]


def fit_normalization(model: MlpModel, X, y):
    lo, hi = X.min(axis=0), X.max(axis=0)
    scale = hi - lo
    active = scale > 0
    model.x_min = lo
    model.x_scale = np.where(active, scale, 1.0)
    y_lo, y_hi = float(y.min()), float(y.max())
    model.y_min = y_lo
    model.y_scale = y_hi - y_lo if y_hi > y_lo else 1.0
    model.metadata["active_features"] = int(active.sum())


def train(X, y, config: TrainConfig | None = None, metadata: dict | None = None,
          eval_set: tuple | None = None):
    """Fit a model; returns ``(best model, History)``.

    The data are split by a seeded shuffle into training and test parts;
    early stopping watches the test loss.
    """
    cfg = config or TrainConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(X) < 2:
        raise ValueError("need a 2-D feature matrix with matching labels and at least 2 samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        bad = int(np.flatnonzero(~np.isfinite(X).all(axis=1) | ~np.isfinite(y))[0])
        raise TrainingError(f"non-finite feature or label in sample {bad}")
    meta = dict(metadata or {})
    threshold = cfg.threshold * (meta.get("N", 1) if cfg.threshold_per_site else 1)

    tr, te = split_indices(len(X), cfg.train_fraction, cfg.seed)
    Xtr, ytr, Xte, yte = X[tr], y[tr], X[te], y[te]
    if eval_set is not None:
        Xte, yte = (np.asarray(a, dtype=float) for a in eval_set)

    model = init_model([X.shape[1], *cfg.hidden, 1], spawn_seed(cfg.seed, 1))
    fit_normalization(model, Xtr, ytr)
    model.metadata.update(meta)
    model.metadata["train_config"] = asdict(cfg)
    model.metadata["config_hash"] = cfg.digest()

    params = model.params()
    m1 = [np.zeros_like(p) for p in params]
    m2 = [np.zeros_like(p) for p in params]
    shuffle = make_rng(spawn_seed(cfg.seed, 2))
    hist = History(threads=os.environ.get("OPENBLAS_NUM_THREADS", os.environ.get("OMP_NUM_THREADS", "default")))
    best_loss, best_model = math.inf, model.copy()
    watch, stale, step = math.inf, 0, 0
    decay = 1.0 - cfg.lr * cfg.weight_decay

    for epoch in range(cfg.max_epochs):
        order = shuffle.permutation(len(Xtr))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = gradients(model, Xtr[idx], ytr[idx], threshold, cfg.eta)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            step += 1
            c1 = 1.0 - cfg.beta1 ** step
            c2 = 1.0 - cfg.beta2 ** step
            for p, g, a, b in zip(params, grads, m1, m2):
                p *= decay
                a *= cfg.beta1
                a += (1 - cfg.beta1) * g
                b *= cfg.beta2
                b += (1 - cfg.beta2) * g * g
                p -= cfg.lr * (a / c1) / (np.sqrt(b / c2) + cfg.eps)

        train_loss = hybrid_loss(forward(model, Xtr), ytr, threshold, cfg.eta)
        pred_te = forward(model, Xte)
        test_loss = hybrid_loss(pred_te, yte, threshold, cfg.eta)
        if not (math.isfinite(train_loss) and math.isfinite(test_loss)):
            raise TrainingError(f"non-finite loss after epoch {epoch}")
        hist.epochs.append({"epoch": epoch, "train_loss": train_loss, "test_loss": test_loss,
                            "test_r2": _safe_r2(pred_te, yte)})
        if test_loss < best_loss:
            best_loss, best_model, hist.best_epoch = test_loss, model.copy(), epoch
        if test_loss < watch - cfg.min_delta:
            watch, stale = test_loss, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                hist.stopped_early = True
                break

    best_model.metadata["best_epoch"] = hist.best_epoch
    best_model.metadata["test_loss"] = best_loss
    best_model.metadata["test_r2"] = hist.epochs[hist.best_epoch]["test_r2"]
    return best_model, hist


def train_dataset(ds, n: int, config: TrainConfig | None = None):
    """Train on the records of one Renyi order in a :class:`~qmilearn.dataset.DatasetFile`."""
    X, y = ds.arrays(n)
    if len(X) == 0:
        raise ValueError(f"dataset has no records with n={n}")
    Ns = {r["N"] for r in ds.records if r["n"] == n}
    if len(Ns) != 1:
        raise ValueError(f"dataset mixes chain sizes {sorted(Ns)}")
    meta = {"n": n, "N": Ns.pop(), "dataset_master_seed": ds.header.get("master_seed")}
    return train(X, y, config, meta)


# persistence

def model_to_dict(model: MlpModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "dims": model.dims,
        "activation": model.activation,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "x_min": model.x_min.tolist(),
        "x_scale": model.x_scale.tolist(),
        "y_min": model.y_min,
        "y_scale": model.y_scale,
        "metadata": model.metadata,
    }


def model_from_dict(doc: dict) -> MlpModel:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError("not a qmilearn model document")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}")
    required = ("dims", "activation", "weights", "biases", "x_min", "x_scale", "y_min", "y_scale")
    missing = [k for k in required if k not in doc]
    if missing:
        raise ModelFormatError(f"model document lacks {missing}")
    if doc["activation"] != "gelu":
        raise ModelFormatError(f"unknown activation {doc['activation']!r}")
    weights = [np.asarray(w, dtype=float) for w in doc["weights"]]
    biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
    dims = doc["dims"]
    if (len(weights) != len(dims) - 1 or len(biases) != len(weights)
            or any(w.shape != (a, b) for w, a, b in zip(weights, dims[:-1], dims[1:]))
            or any(bb.shape != (b,) for bb, b in zip(biases, dims[1:]))):
        raise ModelFormatError("layer shapes are inconsistent with dims")
    x_min = np.asarray(doc["x_min"], dtype=float)
    x_scale = np.asarray(doc["x_scale"], dtype=float)
    if x_min.shape != (dims[0],) or x_scale.shape != (dims[0],) or np.any(x_scale <= 0):
        raise ModelFormatError("normalization statistics are invalid")
    return MlpModel(weights, biases, x_min, x_scale, float(doc["y_min"]), float(doc["y_scale"]),
                    doc["activation"], dict(doc.get("metadata", {})))


def save_model(model: MlpModel, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, allow_nan=True)


def load_model(path) -> MlpModel:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(doc)
