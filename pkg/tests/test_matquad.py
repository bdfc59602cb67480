import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualkf.errors import InputError, InstabilityError, ParameterError
from dualkf.matquad import is_schur, lyapunov_residual, solve_dlyap, spectral_radius
from dualkf.sysmodel import make_rng


def rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def series_sum(F, W, terms=200):
    X = np.zeros_like(W)
    P = np.eye(F.shape[0])
    for _ in range(terms):
        X += P @ W @ P.T
        P = F @ P
    return X


def random_stable(rng, n, rho):
    F = rng.standard_normal((n, n))
    return F * (rho / spectral_radius(F))


def random_psd(rng, n):
    B = rng.standard_normal((n, n))
    return B @ B.T


class TestSpectralRadius:
    def test_scalar(self):
        assert spectral_radius([[0.9]]) == pytest.approx(0.9, rel=1e-12)

    def test_identity(self):
        assert spectral_radius(np.eye(2)) == pytest.approx(1.0, rel=1e-12)

    def test_rotation(self):
        assert spectral_radius(rotation(0.1)) == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.parametrize("bad", [np.ones((2, 3)), [[np.nan]], [[np.inf, 0], [0, 1]], np.zeros((0, 0))])
    def test_rejects_bad_input(self, bad):
        with pytest.raises(InputError):
            spectral_radius(bad)

    def test_transpose_and_similarity_invariance(self):
        rng = make_rng(3)
        for _ in range(20):
            n = int(rng.integers(1, 6))
            M = rng.standard_normal((n, n))
            r = spectral_radius(M)
            assert spectral_radius(M.T) == pytest.approx(r, rel=1e-12, abs=1e-12)
            S = np.eye(n) + 0.3 * rng.standard_normal((n, n))
            if np.linalg.cond(S) > 10:
                continue
            assert spectral_radius(S @ M @ np.linalg.inv(S)) == pytest.approx(r, rel=1e-8, abs=1e-12)


class TestIsSchur:
    def test_examples(self):
        assert is_schur([[0.9]])
        assert not is_schur(np.eye(2))
        assert not is_schur(rotation(0.1))

    def test_margin(self):
        assert is_schur([[0.5]], margin=0.4)
        assert not is_schur([[0.5]], margin=0.5)

    @pytest.mark.parametrize("margin", [1.0, 1.5, -0.1])
    def test_margin_out_of_range(self, margin):
        with pytest.raises(ParameterError):
            is_schur([[0.1]], margin)


class TestSolveDlyap:
    def test_zero_dynamics(self):
        Q = np.array([[2.0, 0.5], [0.5, 1.0]])
        sol = solve_dlyap(np.zeros((2, 2)), Q)
        np.testing.assert_allclose(sol.X, Q, atol=1e-15)

    def test_half(self):
        assert solve_dlyap([[0.5]], [[1.0]]).X[0, 0] == pytest.approx(4.0 / 3.0, rel=1e-13)

    def test_point_nine(self):
        assert solve_dlyap([[0.9]], [[1.81]]).X[0, 0] == pytest.approx(1.81 / 0.19, rel=1e-12)

    def test_unstable_raises(self):
        with pytest.raises(InstabilityError) as info:
            solve_dlyap([[1.0]], [[1.0]])
        assert info.value.rho == pytest.approx(1.0)
        with pytest.raises(InstabilityError):
            solve_dlyap(rotation(0.1), np.eye(2))

    def test_asymmetric_forcing_rejected(self):
        with pytest.raises(InputError):
            solve_dlyap(np.zeros((2, 2)), [[1.0, 1.0], [0.0, 1.0]])

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            solve_dlyap(np.zeros((2, 2)), np.eye(3))

    def test_random_against_series(self):
        rng = make_rng(11)
        for _ in range(25):
            n = int(rng.integers(1, 6))
            F = random_stable(rng, n, rng.uniform(0.5, 0.95))
            W = random_psd(rng, n)
            sol = solve_dlyap(F, W)
            assert sol.residual_norm <= 1e-12 * max(1.0, np.linalg.norm(sol.X))
            assert np.linalg.eigvalsh(sol.X).min() >= -1e-10
            np.testing.assert_array_equal(sol.X, sol.X.T)
            np.testing.assert_allclose(sol.X, series_sum(F, W), atol=1e-8 * max(1, np.abs(sol.X).max()))

    def test_ill_conditioned(self):
        rng = make_rng(5)
        F = random_stable(rng, 3, 0.999)
        W = random_psd(rng, 3)
        sol = solve_dlyap(F, W)
        assert lyapunov_residual(F, sol.X, W) <= 1e-12 * max(1.0, np.linalg.norm(sol.X))


@settings(max_examples=60, deadline=None)
@given(
    f=st.floats(-0.98, 0.98),
    w=st.floats(0.0, 100.0),
)
def test_scalar_closed_form(f, w):
    X = solve_dlyap([[f]], [[w]]).X[0, 0]
    assert X == pytest.approx(w / (1.0 - f * f), rel=1e-10, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 5), rho=st.floats(0.0, 0.97))
def test_residual_contract_property(seed, n, rho):
    rng = make_rng(seed)
    F = random_stable(rng, n, rho) if rho > 0 else np.zeros((n, n))
    W = random_psd(rng, n)
    sol = solve_dlyap(F, W)
    assert sol.residual_norm <= 1e-12 * max(1.0, np.linalg.norm(sol.X))
    assert np.linalg.eigvalsh(sol.X).min() >= -1e-10 * max(1.0, np.abs(sol.X).max())
