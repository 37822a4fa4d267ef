import numpy as np
import pytest

from helpers_brute import full_hamiltonian
from qmilearn import _core
from qmilearn._core import _fallback
from qmilearn.spinchain import (
    QuenchSpec,
    StateVector,
    build_hamiltonian,
    energy,
    evolve,
    evolve_many,
    initial_state,
    magnetization,
    make_initial_state,
    sample_disorder,
    sector_basis,
)


def test_disorder_zero_width():
    assert list(sample_disorder(0.0, 123, 5)) == [0.0] * 5


def test_disorder_range():
    h = sample_disorder(8.0, 1, 10)
    assert len(h) == 10 and np.all(np.abs(h) <= 8.0)


def test_disorder_moments():
    h = sample_disorder(1.0, 1, 100_000)
    sigma = np.sqrt(1 / 3 / len(h))
    assert abs(h.mean()) < 3 * sigma
    assert abs(h.var() / (1 / 3) - 1) < 0.05


def test_disorder_deterministic_and_rejects_negative():
    assert np.array_equal(sample_disorder(2.0, 9, 7), sample_disorder(2.0, 9, 7))
    with pytest.raises(ValueError):
        sample_disorder(-1.0, 0, 3)


def test_neel_patterns():
    assert make_initial_state("neel", 4) == [0, 1, 0, 1]
    spec = QuenchSpec.from_seeds(10, 1.0, 1.0, 0, "neel")
    assert spec.n_up == 5


def test_random_pattern_reproducible():
    a = make_initial_state("random", 10, seed=7)
    assert a == make_initial_state("random", 10, seed=7)
    assert set(a) <= {0, 1} and len(a) == 10


def test_spec_validation():
    with pytest.raises(ValueError):
        QuenchSpec(3, 1.0, 0.5, (0.0, 0.9, 0.0), (0, 1, 0))
    with pytest.raises(ValueError):
        QuenchSpec(3, 1.0, 0.5, (0.0, 0.0, 0.0), (0, 1))
    with pytest.raises(ValueError):
        QuenchSpec(1, 1.0, 0.0, (0.0,), (0,))


def test_two_site_spectrum():
    spec = QuenchSpec(2, 1.0, 0.0, (0, 0), (0, 1))
    ham = build_hamiltonian(spec)
    assert np.allclose(sorted(ham.eigenvalues), [-0.75, 0.25], atol=1e-14)
    full = build_hamiltonian(QuenchSpec(2, 1.0, 0.0, (0, 0), (0, 0)))
    assert full.dim == 1 and full.eigenvalues[0] == pytest.approx(0.25, abs=1e-15)


def test_sector_spectrum_matches_full_space():
    spec = QuenchSpec.from_seeds(6, 1.0, 2.0, 17, [0, 1, 0, 1, 0, 1])
    ham = build_hamiltonian(spec)
    H = full_hamiltonian(6, 1.0, spec.fields)
    basis = sector_basis(6, 3)
    block = H[np.ix_(basis, basis)]
    # the sector is an invariant subspace of the full operator
    mask = np.ones(64, bool)
    mask[basis] = False
    assert np.max(np.abs(H[np.ix_(mask, basis)])) == 0
    assert np.max(np.abs(block - ham.matrix)) < 1e-12
    full_in_sector = np.linalg.eigvalsh(block)
    assert np.max(np.abs(np.sort(ham.eigenvalues) - full_in_sector)) < 1e-10


def test_hamiltonian_invariants():
    spec = QuenchSpec.from_seeds(8, 1.5, 3.0, 4, "neel")
    ham = build_hamiltonian(spec)
    H, E, V = ham.matrix, ham.eigenvalues, ham.eigenvectors
    assert np.array_equal(H, H.T)
    assert np.max(np.abs(V.T @ V - np.eye(ham.dim))) < 1e-10
    assert np.max(np.abs(V @ np.diag(E) @ V.T - H)) < 1e-10


def _rk4(H, psi, t, dt):
    f = lambda y: -1j * (H @ y)  # noqa: E731
    for _ in range(int(round(t / dt))):
        k1 = f(psi)
        k2 = f(psi + 0.5 * dt * k1)
        k3 = f(psi + 0.5 * dt * k2)
        k4 = f(psi + dt * k3)
        psi = psi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return psi


def test_evolve_matches_rk4():
    spec = QuenchSpec.from_seeds(6, 1.0, 1.0, 5, "neel")
    ham = build_hamiltonian(spec)
    psi0 = initial_state(spec)
    ref = _rk4(full_hamiltonian(6, 1.0, spec.fields), psi0.to_full(), 1.0, 1e-4)
    got = evolve(ham, psi0, 1.0).to_full()
    assert np.max(np.abs(got - ref)) < 1e-6


def test_evolve_identity_and_sector_mismatch():
    spec = QuenchSpec.from_seeds(6, 1.0, 1.0, 5, "neel")
    ham = build_hamiltonian(spec)
    psi0 = initial_state(spec)
    assert np.allclose(evolve(ham, psi0, 0.0).amplitudes, psi0.amplitudes, atol=1e-15)
    with pytest.raises(ValueError):
        evolve(ham, StateVector.product([0, 0, 0, 1, 0, 1]), 1.0)


@pytest.mark.parametrize("t", [0.3, 17.0, 1e3, 1e9])
def test_conservation(t):
    spec = QuenchSpec.from_seeds(10, 1.0, 2.0, 8, "neel")
    ham = build_hamiltonian(spec)
    psi0 = initial_state(spec)
    psi = evolve(ham, psi0, t)
    assert abs(psi.norm - 1) < 1e-12
    assert abs(energy(ham, psi) - energy(ham, psi0)) < 1e-10
    assert abs(magnetization(psi) - magnetization(psi0)) < 1e-10


def test_time_composition():
    spec = QuenchSpec.from_seeds(8, 0.7, 1.0, 2, "neel")
    ham = build_hamiltonian(spec)
    psi0 = initial_state(spec)
    two = evolve(ham, evolve(ham, psi0, 1.3), 2.9).amplitudes
    one = evolve(ham, psi0, 4.2).amplitudes
    assert np.max(np.abs(two - one)) < 1e-10


def test_evolve_many_matches_evolve_and_is_deterministic():
    spec = QuenchSpec.from_seeds(8, 1.0, 1.0, 2, "neel")
    ham = build_hamiltonian(spec)
    psi0 = initial_state(spec)
    ts = [0.0, 0.5, 10.0]
    many = evolve_many(ham, psi0, ts)
    for k, t in enumerate(ts):
        assert np.max(np.abs(many[k] - evolve(ham, psi0, t).amplitudes)) < 1e-13
    again = evolve_many(build_hamiltonian(spec), initial_state(spec), ts)
    assert np.array_equal(many, again)


def test_compiled_and_fallback_kernels_agree():
    N = 8
    basis = np.ascontiguousarray(sector_basis(N, 4))
    h = np.linspace(-1, 1, N)
    assert np.array_equal(_fallback.sector_basis(N, 4), _core.sector_basis(N, 4))
    assert np.allclose(_fallback.sector_hamiltonian(basis, N, 1.3, h),
                       _core.sector_hamiltonian(basis, N, 1.3, h), atol=1e-14)
    rng = np.random.default_rng(0)
    psi = rng.normal(size=(3, len(basis))) + 1j * rng.normal(size=(3, len(basis)))
    pa, ca = _fallback.pair_moments(psi, basis, N)
    pb, cb = _core.pair_moments(psi, basis, N)
    assert np.allclose(pa, pb, atol=1e-12) and np.allclose(ca, cb, atol=1e-12)
    assert np.array_equal(_fallback.index_table(basis, N), _core.index_table(basis, N))


def test_backend_selection_by_environment():
    import os
    import subprocess
    import sys

    code = "import qmilearn; print(qmilearn.BACKEND)"
    env = dict(os.environ, QMILEARN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    assert _core.BACKEND in ("cython", "python")
