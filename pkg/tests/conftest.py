import numpy as np
import pytest

from qmilearn.spinchain import QuenchSpec, StateVector, build_hamiltonian, evolve, initial_state

#: acceptance outcomes collected by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_state(N: int, n_up: int, seed: int) -> StateVector:
    """Haar-like random vector inside one magnetization sector."""
    from qmilearn.spinchain import sector_basis

    rng = np.random.default_rng(seed)
    d = len(sector_basis(N, n_up))
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return StateVector(v / np.linalg.norm(v), n_up, N)


def quenched_state(N=6, Jz=1.0, W=1.0, t=5.0, seed=3, initial="neel") -> StateVector:
    spec = QuenchSpec.from_seeds(N, Jz, W, seed, initial, state_seed=seed)
    return evolve(build_hamiltonian(spec), initial_state(spec), t)


@pytest.fixture
def bell():
    # (|01> + |10>)/sqrt 2 on two sites
    return StateVector(np.array([1, 1]) / np.sqrt(2), 1, 2)
