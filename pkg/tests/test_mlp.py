import json
import math
import subprocess
import sys

import numpy as np
import pytest

from qmilearn.mlp import (
    ModelFormatError,
    MlpModel,
    TrainConfig,
    TrainingError,
    forward,
    gelu,
    gradients,
    hybrid_loss,
    init_model,
    load_model,
    model_from_dict,
    model_to_dict,
    r_squared,
    save_model,
    train,
)


def erf_series(z, terms=80):
    """Maclaurin series of erf, summed with exact rational coefficients in floats."""
    total, term = 0.0, z
    for k in range(terms):
        total += term / (2 * k + 1)
        term *= -z * z / (k + 1)
    return 2 / math.sqrt(math.pi) * total


def test_gelu_values():
    assert gelu(0.0) == 0.0
    g10 = float(gelu(10.0))
    # erf(10/sqrt 2) rounds to 1 in double precision, so the upper end is attained
    assert 9.999 < g10 <= 10.0
    phi1 = 0.5 * (1 + erf_series(1 / math.sqrt(2)))
    assert phi1 == pytest.approx(0.8413447460685429, abs=1e-15)
    assert float(gelu(1.0)) == pytest.approx(phi1, abs=1e-12)
    for x in (-3.0, -0.7, 0.2, 2.5):
        assert float(gelu(x)) == pytest.approx(0.5 * x * (1 + erf_series(x / math.sqrt(2))), abs=1e-12)


def _hand_model():
    W0 = np.array([[0.5, -1.25]])
    b0 = np.array([0.1, 0.3])
    W1 = np.array([[2.0], [-0.75]])
    b1 = np.array([0.05])
    return MlpModel([W0, W1], [b0, b1], np.array([0.0]), np.array([1.0]))


def test_hand_built_forward():
    m = _hand_model()
    g = lambda v: 0.5 * v * (1 + math.erf(v / math.sqrt(2)))  # noqa: E731
    for x in (-1.0, 0.0, 0.4, 3.0):
        expect = 2.0 * g(0.5 * x + 0.1) - 0.75 * g(-1.25 * x + 0.3) + 0.05
        assert abs(forward(m, np.array([x])) - expect) <= 1e-15 * max(1.0, abs(expect))


def test_forward_zero_last_layer_and_purity():
    m = init_model([5, 8, 4, 1], 0)
    m.weights[-1][:] = 0
    m.y_min, m.y_scale = 0.7, 2.0
    X = np.random.default_rng(0).normal(size=(6, 5))
    assert np.all(forward(m, X) == 0.7)
    m2 = init_model([5, 8, 4, 1], 0)
    assert np.array_equal(forward(m2, X), forward(m2, X))
    with pytest.raises(ValueError):
        forward(m2, np.zeros(4))


def test_forward_does_not_clip_out_of_range_inputs():
    m = init_model([1, 3, 1], 2)
    m.x_min, m.x_scale = np.array([0.0]), np.array([1.0])
    assert forward(m, np.array([5.0])) != forward(m, np.array([1.0]))


def test_hybrid_loss_examples():
    assert hybrid_loss([0.5, 0.01], [0.5, 0.01]) == 0.0
    assert hybrid_loss([0.6], [0.5]) == pytest.approx(0.007, abs=1e-15)
    assert hybrid_loss([0.02], [0.01]) == pytest.approx(0.003, abs=1e-15)
    with pytest.raises(ValueError):
        hybrid_loss([], [])


def test_hybrid_loss_continuous_in_prediction():
    true = np.array([0.029999, 0.03, 0.5])
    base = np.array([0.05, 0.01, 0.45])
    for eps in (1e-6, 1e-9):
        diff = abs(hybrid_loss(base + eps, true) - hybrid_loss(base, true))
        assert diff < 10 * eps


def _perturbed_model(dims, seed):
    rng = np.random.default_rng(seed)
    m = init_model(dims, seed)
    for p in m.params():
        p += rng.normal(scale=0.05, size=p.shape)
    m.y_min, m.y_scale = 0.1, 2.0
    return m, rng


def _fd_check(m, X, y, coords, h=1e-6, normwise=False):
    """Largest elementwise relative error, or the normwise one over ``coords``."""
    _, grads = gradients(m, X, y)
    params = m.params()
    worst = 0.0
    fds, ans = [], []
    for k, idx in coords:
        P = params[k]
        orig = P[idx]
        P[idx] = orig + h
        fp = hybrid_loss(forward(m, X), y)
        P[idx] = orig - h
        fm = hybrid_loss(forward(m, X), y)
        P[idx] = orig
        fd = (fp - fm) / (2 * h)
        an = grads[k][idx]
        fds.append(fd)
        ans.append(an)
        worst = max(worst, abs(fd - an) / max(abs(an), abs(fd)))
    if normwise:
        fds, ans = np.array(fds), np.array(ans)
        return float(np.linalg.norm(fds - ans) / np.linalg.norm(ans))
    return worst


def test_gradients_large_model_finite_difference():
    m, rng = _perturbed_model([55, 512, 32, 1], 1)
    X = rng.uniform(-1, 1, (16, 55))
    y = np.r_[rng.uniform(0, 0.03, 4), rng.uniform(0.03, 3, 12)]
    shapes = [p.shape for p in m.params()]
    coords = []
    for _ in range(100):
        k = int(rng.integers(len(shapes)))
        coords.append((k, tuple(int(rng.integers(s)) for s in shapes[k])))
    assert _fd_check(m, X, y, coords) < 1e-6


def test_gradients_many_parameter_points():
    # 100 independent random parameter points on a small network, every coordinate checked.
    # Components near 1e-6 sit at the finite-difference rounding floor, so the
    # error is measured over the whole gradient vector at each point.
    worst = 0.0
    for seed in range(100):
        m, rng = _perturbed_model([4, 6, 3, 1], seed)
        X = rng.uniform(-1, 1, (5, 4))
        y = np.r_[rng.uniform(0, 0.03, 2), rng.uniform(0.03, 2, 3)]
        coords = [(k, idx) for k, p in enumerate(m.params()) for idx in np.ndindex(p.shape)]
        worst = max(worst, _fd_check(m, X, y, coords, normwise=True))
    assert worst < 1e-6


def test_zero_residual_gives_zero_gradient():
    m, rng = _perturbed_model([4, 6, 3, 1], 0)
    X = rng.uniform(size=(7, 4))
    y = forward(m, X)
    loss, grads = gradients(m, X, y)
    assert loss == 0.0 and all(np.all(g == 0) for g in grads)


def test_duplicated_batch_keeps_mean_gradient():
    m, rng = _perturbed_model([4, 6, 3, 1], 5)
    X = rng.uniform(size=(6, 4))
    y = rng.uniform(0, 1, 6)
    _, g1 = gradients(m, X, y)
    _, g2 = gradients(m, np.vstack([X, X]), np.r_[y, y])
    assert all(np.allclose(a, b, rtol=1e-12, atol=1e-15) for a, b in zip(g1, g2))


def test_r_squared_examples():
    y = np.array([0.1, 0.5, 0.9, 1.3])
    assert r_squared(y, y) == 1.0
    assert r_squared(np.full(4, y.mean()), y) == pytest.approx(0.0, abs=1e-15)
    c = 0.2
    v = np.mean((y - y.mean()) ** 2)
    assert r_squared(y + c, y) == pytest.approx(1 - c * c / v, abs=1e-14)
    with pytest.raises(ValueError):
        r_squared([1.0, 1.0], [2.0, 2.0])
    with pytest.raises(ValueError):
        r_squared([1.0], [2.0])


def _toy_data(n=300, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, 6))
    y = np.abs(X[:, 0] * X[:, 1]) + 0.2 * X[:, 2] ** 2
    return X, y


SMALL = dict(hidden=(16, 8), max_epochs=30, batch_size=32, seed=4)


def test_training_is_deterministic():
    X, y = _toy_data()
    m1, h1 = train(X, y, TrainConfig(**SMALL))
    m2, h2 = train(X, y, TrainConfig(**SMALL))
    assert all(np.array_equal(a, b) for a, b in zip(m1.params(), m2.params()))
    assert h1.epochs == h2.epochs


def test_training_learns_and_history_invariant():
    X, y = _toy_data(600)
    m, hist = train(X, y, TrainConfig(hidden=(32, 16), max_epochs=60, batch_size=32, seed=1))
    best = hist.epochs[hist.best_epoch]["test_loss"]
    assert all(best <= e["test_loss"] for e in hist.epochs[hist.best_epoch:])
    assert hist.epochs[hist.best_epoch]["test_r2"] > 0.5
    assert m.metadata["best_epoch"] == hist.best_epoch


def test_early_stopping_triggers():
    X, y = _toy_data(200)
    _, hist = train(X, y, TrainConfig(hidden=(8, 4), max_epochs=500, patience=3,
                                      min_delta=1.0, batch_size=64))
    # epoch 0 sets the reference, then `patience` epochs without improvement
    assert hist.stopped_early and len(hist.epochs) == 1 + 3


def test_constant_labels():
    X, _ = _toy_data(200)
    y = np.full(len(X), 0.4)
    m, hist = train(X, y, TrainConfig(**{**SMALL, "max_epochs": 200}))
    assert math.isnan(hist.epochs[-1]["test_r2"])
    # the squared-error branch slows down as residuals shrink; early stopping ends near the constant
    assert hist.epochs[hist.best_epoch]["test_loss"] < 0.01 * hist.epochs[0]["test_loss"]
    assert np.allclose(forward(m, X), 0.4, atol=0.03)
    with pytest.raises(ValueError):
        r_squared(forward(m, X), y)


def test_non_finite_loss_aborts():
    X, y = _toy_data(100)
    y[3] = np.inf
    with pytest.raises((TrainingError, ValueError)):
        train(X, y, TrainConfig(**SMALL))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(eta=1.5)
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    assert TrainConfig().digest() == TrainConfig().digest()
    assert TrainConfig(seed=1).digest() != TrainConfig().digest()


def test_normalization_round_trip():
    X, y = _toy_data()
    m, _ = train(X, y, TrainConfig(**SMALL))
    ys = np.linspace(y.min(), y.max(), 11)
    assert np.max(np.abs(m.denormalize_y(m.normalize_y(ys)) - ys)) < 1e-12


def test_save_load_round_trip(tmp_path):
    X, y = _toy_data()
    m, _ = train(X, y, TrainConfig(**SMALL))
    p = tmp_path / "m.json"
    save_model(m, p)
    back = load_model(p)
    assert np.array_equal(forward(m, X), forward(back, X))


def test_truncated_and_mismatched_files(tmp_path):
    m = init_model([3, 4, 1], 0)
    p = tmp_path / "m.json"
    save_model(m, p)
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError):
        load_model(p)
    doc = model_to_dict(m)
    with pytest.raises(ModelFormatError):
        model_from_dict({**doc, "version": 99})
    with pytest.raises(ModelFormatError):
        model_from_dict({**doc, "dims": [3, 5, 1]})
    with pytest.raises(ModelFormatError):
        model_from_dict({k: v for k, v in doc.items() if k != "weights"})


_PREDICT = r"""
import json, sys
import numpy as np
from qmilearn.mlp import forward, load_model
x = np.linspace(-1, 1, 6)
print(json.dumps(float(forward(load_model(sys.argv[1]), x)).hex()))
"""


def test_predictions_identical_in_another_process(tmp_path):
    X, y = _toy_data()
    m, _ = train(X, y, TrainConfig(**SMALL))
    p = tmp_path / "m.json"
    save_model(m, p)
    out = subprocess.run([sys.executable, "-c", _PREDICT, str(p)], check=True,
                         capture_output=True, text=True).stdout
    assert json.loads(out) == float(forward(m, np.linspace(-1, 1, 6))).hex()
