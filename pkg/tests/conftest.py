import numpy as np
import pytest

from dualkf.kalman import dare_gain
from dualkf.matquad import spectral_radius
from dualkf.sysmodel import SystemModel, is_observable, make_rng, mass_spring_model


@pytest.fixture
def s1():
    """Scalar model a=0.9, h=q=r=p0=1, m0=0."""
    return SystemModel.scalar(0.9)


@pytest.fixture
def ms():
    return mass_spring_model()


@pytest.fixture(scope="session")
def ms_L0():
    # a non-optimal stabilizing start; the surrogate initial gain is already optimal here
    return np.array([[0.2], [0.1]])


def random_system(rng, n=None, m=None):
    """Observable (A, H) with Q, R positive definite and rho(A) in [0.5, 1.2]."""
    n = n or int(rng.integers(1, 5))
    m = m or int(rng.integers(1, 3))
    while True:
        A = rng.standard_normal((n, n))
        A *= rng.uniform(0.5, 1.2) / spectral_radius(A)
        H = rng.standard_normal((m, n))
        if is_observable(A, H)[0]:
            break
    Bq = rng.standard_normal((n, n))
    Br = rng.standard_normal((m, m))
    return SystemModel(
        A=A,
        H=H,
        Q=Bq @ Bq.T + 0.1 * np.eye(n),
        R=Br @ Br.T + 0.1 * np.eye(m),
        P0=np.eye(n),
        m0=rng.standard_normal(n),
    )


def random_stabilizing_gain(model, rng, rho_max=0.9):
    """``L_inf`` plus a random perturbation, shrunk until ``rho(A_L) <= rho_max``."""
    L_inf = dare_gain(model).L_inf
    D = rng.standard_normal(L_inf.shape)
    s = 1.0
    for _ in range(60):
        L = L_inf + s * D
        if spectral_radius(model.A - L @ model.H) <= rho_max:
            return L
        s *= 0.7
    if spectral_radius(model.A - L_inf @ model.H) <= rho_max:
        return L_inf
    return None


def systems_with_gains(count, seed, rho_max=0.9):
    rng = make_rng(seed)
    out = []
    while len(out) < count:
        model = random_system(rng)
        L = random_stabilizing_gain(model, rng, rho_max)
        if L is not None:
            out.append((model, L))
    return out
