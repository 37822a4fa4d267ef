import warnings

import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import quenched_state
from qmilearn.calibrate import (
    NoisyCorrelations,
    corrected_density_matrices,
    correct_pair,
    correct_single,
    exact_correlations,
    inject_noise,
    measurement_budget,
    noisy_local_features,
    pair_vector,
    partial_traces,
    project_density,
    weighted_loss,
)
from qmilearn.dataset import irreducible_features
from qmilearn.entropy import (
    cluster_correlations,
    local_density_matrices,
    pauli_expectations,
    pauli_labels,
    rho_from_pauli,
)


def _local(N=6, t=4.0):
    psi = quenched_state(N=N, t=t)
    s, p = local_density_matrices(psi.amplitudes[None, :], psi.basis, N)
    return s[0], p[0]


def _check_valid(rho, tol=1e-12):
    assert np.max(np.abs(rho - rho.conj().T)) < tol
    assert abs(np.trace(rho).real - 1) < tol
    assert np.linalg.eigvalsh(rho).min() >= -tol


def _bell_block(zz=-1.0):
    T = np.zeros(15)
    labels = pauli_labels(2)
    T[labels.index(("X", "X"))] = 1.0
    T[labels.index(("Y", "Y"))] = 1.0
    T[labels.index(("Z", "Z"))] = zz
    return T


def test_noise_injection_properties():
    single, pair = exact_correlations(*_local())
    same = inject_noise(single, pair, 0.0, 5)
    assert np.array_equal(same.single, single) and np.array_equal(same.pair, pair)
    a = inject_noise(single, pair, 0.01, 5)
    b = inject_noise(single, pair, 0.01, 5)
    assert np.array_equal(a.pair, b.pair)
    big = np.zeros((200, 3)), np.zeros((200 * 199 // 2, 3, 3))
    dev = inject_noise(*big, 0.01, 3)
    assert np.std(dev.pair) == pytest.approx(0.01, rel=0.02)
    with pytest.raises(ValueError):
        inject_noise(single, pair, -0.1, 0)


def test_exact_input_is_a_fixed_point():
    single, pair = exact_correlations(*_local())
    for s1, s2 in ((0.01, 0.01), (0.01, 0.03), (1.0, 0.2)):
        T = pair_vector(single[0], single[3], pair[2])
        res = correct_pair(T, s1, s2)
        assert res.loss < 1e-12
        assert res.converged and res.grad_norm < 1e-8


def test_out_of_range_block_is_projected():
    res = correct_pair(_bell_block(-1.05), 0.01)
    rho = res.rho.matrix
    _check_valid(rho)
    assert res.loss > 0
    C = pauli_expectations(rho, 2).real
    assert np.all(np.abs(C) <= 1 + 1e-12)


def test_zero_input_gives_maximally_mixed():
    res = correct_pair(np.zeros(15), 0.02)
    assert np.allclose(res.rho.matrix, np.eye(4) / 4, atol=1e-12)
    assert res.loss < 1e-20


def test_block_forms_agree():
    single, pair = exact_correlations(*_local())
    a = correct_pair(pair_vector(single[1], single[2], pair[5]), 0.01).rho.matrix
    b = correct_pair((single[1], single[2], pair[5]), 0.01).rho.matrix
    assert np.array_equal(a, b)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        correct_pair(np.zeros(14), 0.01)
    with pytest.raises(ValueError):
        correct_pair(np.zeros(15), 0.0)


def _noisy_blocks(count, sigma, seed):
    single, pair = exact_correlations(*_local(N=8, t=30.0))
    noisy = inject_noise(single, pair, sigma, seed)
    iu, ju = np.triu_indices(8, k=1)
    return [pair_vector(noisy.single[i], noisy.single[j], noisy.pair[p])
            for p, (i, j) in enumerate(zip(iu, ju))][:count]


@pytest.mark.parametrize("s1,s2", [(0.05, 0.05), (0.05, 0.02), (0.01, 0.1)])
def test_outputs_always_valid_and_certified(s1, s2):
    for T in _noisy_blocks(12, 0.1, 1):
        res = correct_pair(T, s1, s2)
        _check_valid(res.rho.matrix)
        assert res.converged and res.grad_norm < 1e-8


def _clamp_then_project(T):
    rho = rho_from_pauli(np.clip(T, -1, 1), 2)
    lam, U = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    lam = np.clip(lam, 0, None)
    lam /= lam.sum()
    return (U * lam) @ U.conj().T


@pytest.mark.parametrize("s1,s2", [(0.1, 0.1), (0.1, 0.04)])
def test_monotone_improvement_over_clamp(s1, s2):
    for T in _noisy_blocks(20, 0.2, 7):
        ours = correct_pair(T, s1, s2).loss
        clamp = weighted_loss(_clamp_then_project(T), T, s1, s2)
        assert ours <= clamp + 1e-12


def _loss_over_factor(T, s1, s2):
    def f(x):
        B = (x[:16] + 1j * x[16:]).reshape(4, 4)
        rho = B @ B.conj().T
        return weighted_loss(rho / np.trace(rho).real, T, s1, s2)
    return f


def test_weighted_optimum_beats_generic_optimizer():
    rng = np.random.default_rng(3)
    s1, s2 = 0.05, 0.02
    for T in _noisy_blocks(2, 0.2, 11):
        ours = correct_pair(T, s1, s2).loss
        f = _loss_over_factor(T, s1, s2)
        best = min(minimize(f, rng.normal(size=32), method="BFGS").fun for _ in range(2))
        assert ours <= best + 1e-6 * max(1.0, best)


def test_equal_weights_match_frobenius_projection():
    for T in _noisy_blocks(6, 0.2, 2):
        res = correct_pair(T, 0.03)
        ref = project_density(rho_from_pauli(T, 2))
        assert np.max(np.abs(res.rho.matrix - ref)) < 1e-10


def test_correct_single_cases():
    assert np.allclose(correct_single([0, 0, 0]).matrix, np.eye(2) / 2)
    assert np.allclose(correct_single([0, 0, 1]).matrix, np.diag([1, 0]))
    rho = correct_single([0, 0, 1.02]).matrix
    assert np.allclose(rho, np.diag([1, 0]), atol=1e-15)
    assert np.linalg.eigvalsh(rho).min() >= -1e-15


def test_measurement_budget():
    assert measurement_budget(0.01, 12) == (10_000, 5_940_000)
    assert measurement_budget(1.0, 5)[0] == 1
    with pytest.raises(ValueError):
        measurement_budget(0.0, 4)


def test_zero_sigma_features_are_bit_identical():
    singles, pairs = _local()
    ref = irreducible_features(singles, pairs, 2)
    got = noisy_local_features(singles, pairs, 0.0, 1, [2])[2]
    assert np.array_equal(ref, got)


def test_corrected_matrices_and_marginals():
    singles, pairs = _local(N=6)
    single, pair = exact_correlations(singles, pairs)
    noisy = inject_noise(single, pair, 0.01, 9)
    cs, cp, loss, gnorm = corrected_density_matrices(noisy)
    for rho in list(cs) + list(cp):
        _check_valid(rho)
    assert np.all(gnorm < 1e-8)
    mi, mj = partial_traces(pairs)
    assert np.allclose(mi[0], singles[0]) and np.allclose(mj[0], singles[1])


def test_noisy_correlations_shape_check():
    with pytest.raises(ValueError):
        NoisyCorrelations(np.zeros((4, 3)), np.zeros((5, 3, 3)), 0.1, 0.1)


def test_exact_correlations_layout():
    psi = quenched_state(N=5, t=2.0)
    singles, pairs = local_density_matrices(psi.amplitudes[None, :], psi.basis, 5)
    single, pair = exact_correlations(singles[0], pairs[0])
    corr = cluster_correlations(psi, [1, 3])
    assert pair[1, 0, 1] == pytest.approx(corr["XY"], abs=1e-13)
    assert single[2, 2] == pytest.approx(cluster_correlations(psi, [3])["Z"], abs=1e-13)


def test_no_convergence_warning_on_typical_inputs():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for T in _noisy_blocks(5, 0.05, 4):
            correct_pair(T, 0.05, 0.03)
