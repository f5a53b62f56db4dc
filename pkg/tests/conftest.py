import numpy as np
import pytest

from itsnbf.geometry import UserSet, upa_steering
from itsnbf.interference import InterferenceModel, Provenance
from itsnbf.problem import RobustProblem
from itsnbf.scenario import build_problem, generate_scenario


@pytest.fixture(scope="session")
def table1_scenario():
    return generate_scenario(seed=1)


@pytest.fixture(scope="session")
def table1_problem(table1_scenario):
    return build_problem(table1_scenario, 10.0, -150.0)


def random_users(rng, m_x=2, m_y=2, k=2, kappa=10.0, noise=0.1):
    """Small synthetic user set with unit-order numbers."""
    tx = rng.uniform(-0.8, 0.8, k)
    ty = rng.uniform(-0.8, 0.8, k)
    v = upa_steering(tx, ty, m_x, m_y)
    gp = rng.uniform(0.5, 2.0, k)
    mean = np.sqrt(gp * kappa / (2 * (kappa + 1))) * (1 + 1j)
    return UserSet(v, gp, mean, np.full(k, noise))


def toy_problem(rng, m_x=2, m_y=2, k=2, i_thr=np.inf, n_g=3, p_t=1.0, noise=0.1, k_g=1):
    users = random_users(rng, m_x, m_y, k, noise=noise)
    vg = upa_steering(rng.uniform(-0.8, 0.8, n_g), rng.uniform(-0.8, 0.8, n_g), m_x, m_y)
    ups = (vg * rng.uniform(0.5, 1.5, n_g)) @ vg.conj().T
    model = InterferenceModel(0.5 * (ups + ups.conj().T), Provenance.POSITION_AIDED, "toy")
    return RobustProblem(users, model, i_thr, p_t, k_g)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
