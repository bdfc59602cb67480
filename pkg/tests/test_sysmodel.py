import json
import math

import numpy as np
import pytest

from dualkf.errors import InputError, ParameterError
from dualkf.matquad import spectral_radius
from dualkf.sysmodel import (
    RNG_ALGORITHM,
    SystemModel,
    Trajectory,
    TrajectorySource,
    burn_in_marginal,
    default_burn_in,
    is_observable,
    load_model,
    make_rng,
    mass_spring_model,
    save_model,
    simulate_batch,
    simulate_trajectory,
    validate,
)


class TestValidate:
    def test_scalar_passes(self, s1):
        rep = validate(s1)
        assert rep["ok"] and rep["dimensions_ok"] and rep["observable"]
        assert rep["rho_A"] == pytest.approx(0.9)

    def test_negative_eigenvalue_fails_psd(self):
        m = SystemModel(A=np.eye(2) * 0.5, H=[[1.0, 0.0]], Q=np.diag([1.0, -1.0]), R=[[1.0]], P0=np.eye(2), m0=[0, 0])
        rep = validate(m)
        assert not rep["Q"]["psd"] and not rep["ok"]

    def test_wrong_column_count(self):
        m = SystemModel(A=np.eye(2) * 0.5, H=[[1.0, 0.0, 0.0]], Q=np.eye(2), R=[[1.0]], P0=np.eye(2), m0=[0, 0])
        rep = validate(m)
        assert not rep["dimensions_ok"] and not rep["ok"]


class TestObservability:
    def test_identity_single_output(self):
        assert is_observable(np.eye(2), [[1.0, 0.0]]) == (False, 1)

    def test_mass_spring(self, ms):
        assert is_observable(ms.A, ms.H) == (True, 2)

    def test_full_output(self):
        assert is_observable(np.eye(3), np.eye(3))[0]

    @pytest.mark.parametrize("theta", [0.05, 0.3, 1.0, 2.0, 3.0])
    def test_mass_spring_angles(self, theta):
        m = mass_spring_model(dt=theta)
        assert is_observable(m.A, m.H)[0]


class TestSimulation:
    def test_noiseless(self):
        A = np.array([[0.9, 0.2], [-0.1, 0.8]])
        H = np.array([[1.0, -1.0]])
        m0 = np.array([1.0, 2.0])
        model = SystemModel(A=A, H=H, Q=np.zeros((2, 2)), R=[[0.0]], P0=np.zeros((2, 2)), m0=m0)
        traj = simulate_trajectory(model, 0, 8, seed=1)
        for t in range(8):
            x = np.linalg.matrix_power(A, t) @ m0
            np.testing.assert_allclose(traj.states[t], x, atol=1e-14)
            np.testing.assert_allclose(traj.measurements[t], H @ x, atol=1e-14)

    def test_noiseless_with_burn_in(self):
        model = SystemModel.scalar(0.5, q=0.0, r=0.0, p0=0.0, m0=3.0)
        traj = simulate_trajectory(model, 4, 3, seed=0)
        np.testing.assert_allclose(traj.measurements[:, 0], 3.0 * 0.5 ** np.arange(4, 7), atol=1e-14)

    def test_determinism(self, ms):
        a = simulate_trajectory(ms, 10, 50, seed=42)
        b = simulate_trajectory(ms, 10, 50, seed=42)
        np.testing.assert_array_equal(a.measurements, b.measurements)
        np.testing.assert_array_equal(a.states, b.states)
        c = simulate_trajectory(ms, 10, 50, seed=43)
        assert not np.array_equal(a.measurements, c.measurements)

    def test_white_noise_variance(self):
        # trajectories are capped at 10^4 steps, so the ~10^5 samples come from ten of them;
        # one burn-in step makes every stored y an independent N(0, 1) draw
        model = SystemModel.scalar(0.0, q=1.0, r=0.0, p0=0.0)
        y = np.concatenate([simulate_trajectory(model, 1, 9_999, seed=s).measurements[:, 0] for s in range(10)])
        N = y.size
        assert abs(y.var() - 1.0) <= 3 * math.sqrt(2.0 / N)

    def test_noise_moments(self):
        Q = np.array([[0.5, 0.2], [0.2, 0.3]])
        R = np.array([[0.7]])
        model = SystemModel(A=np.zeros((2, 2)), H=[[1.0, 1.0]], Q=Q, R=R, P0=np.zeros((2, 2)), m0=[0, 0])
        N = 100_000
        ys, xs = simulate_batch(model, N, 2, make_rng(3), keep_states=True)
        xi = xs[:, 1]  # x(1) = xi(0) since A = 0 and x(0) = 0
        om = ys[:, 0, 0]  # y(0) = omega(0)
        C = xi.T @ xi / N
        se = np.sqrt((Q**2 + np.outer(np.diag(Q), np.diag(Q))) / N)
        assert np.all(np.abs(C - Q) <= 3 * se)
        assert abs(np.mean(om**2) - R[0, 0]) <= 3 * R[0, 0] * math.sqrt(2.0 / N)

    def test_non_psd_covariance(self):
        model = SystemModel.scalar(0.5, q=-1.0)
        with pytest.raises(InputError):
            simulate_trajectory(model, 0, 5, seed=0)

    def test_window_length_validation(self, s1):
        with pytest.raises(ParameterError):
            simulate_trajectory(s1, 0, 0, seed=0)
        with pytest.raises(ParameterError):
            simulate_trajectory(s1, 9_999, 2, seed=0)

    def test_burn_in_marginal_matches_recursion(self, ms):
        mean, F = burn_in_marginal(ms.replace(m0=[1.0, -1.0]), 30)
        P = np.array(ms.P0)
        mu = np.array([1.0, -1.0])
        for _ in range(30):
            mu = ms.A @ mu
            P = ms.A @ P @ ms.A.T + ms.Q
        np.testing.assert_allclose(mean, mu, atol=1e-12)
        np.testing.assert_allclose(F @ F.T, P, atol=1e-10)

    def test_burn_in_distribution(self):
        # after B steps the scalar state variance is a^(2B) p0 + q (1 - a^(2B)) / (1 - a^2)
        a, B, N = 0.8, 5, 100_000
        model = SystemModel.scalar(a, q=1.0, r=0.0, p0=2.0)
        ys, _ = simulate_batch(model, N, 1, make_rng(0), burn_in=B)
        var = a ** (2 * B) * 2.0 + (1 - a ** (2 * B)) / (1 - a * a)
        assert abs(ys[:, 0, 0].var() - var) <= 3 * var * math.sqrt(2.0 / N)


class TestMassSpring:
    def test_stated_noise_levels(self, ms):
        assert spectral_radius(ms.A) == pytest.approx(1.0, abs=1e-14)
        assert ms.n == 2 and ms.m == 1
        np.testing.assert_allclose(ms.Q, 0.1 * np.eye(2))
        np.testing.assert_allclose(ms.R, [[0.1]])
        np.testing.assert_allclose(ms.P0, 0.05 * np.eye(2))
        np.testing.assert_array_equal(ms.m0, [0.0, 0.0])
        assert is_observable(ms.A, ms.H)[0]

    def test_small_angle_limit(self):
        np.testing.assert_allclose(mass_spring_model(dt=1e-9).A, np.eye(2), atol=1e-8)

    def test_quarter_rotation(self):
        np.testing.assert_allclose(mass_spring_model(dt=math.pi / 2).A, [[0, 1], [-1, 0]], atol=1e-15)

    @pytest.mark.parametrize("kw", [{"dt": 0.0}, {"omega": -1.0}])
    def test_bad_parameters(self, kw):
        with pytest.raises(ParameterError):
            mass_spring_model(**kw)


class TestModelIO:
    def test_immutable(self, s1):
        with pytest.raises(ValueError):
            s1.A[0, 0] = 2.0

    def test_json_round_trip(self, ms, tmp_path):
        path = tmp_path / "model.json"
        save_model(ms, path)
        back = load_model(path)
        for k in ("A", "H", "Q", "R", "P0", "m0"):
            np.testing.assert_array_equal(getattr(back, k), getattr(ms, k))
        assert set(json.loads(path.read_text())) == {"A", "H", "Q", "R", "P0", "m0"}

    def test_missing_key(self):
        with pytest.raises(InputError):
            SystemModel.from_dict({"A": [[1.0]]})

    def test_public_view_has_no_covariances(self, ms):
        pub = ms.public
        assert not hasattr(pub, "Q") and not hasattr(pub, "R")
        assert pub.n == 2 and pub.m == 1

    def test_trajectory_csv(self, s1, tmp_path):
        traj = simulate_trajectory(s1, 0, 4, seed=0)
        traj.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t,y_1,x_1"
        assert len(lines) == 5
        assert float(lines[1].split(",")[1]) == traj.measurements[0, 0]
        assert traj.window_length == 4 and traj.horizon == 3

    def test_trajectory_length_mismatch(self):
        with pytest.raises(InputError):
            Trajectory(measurements=np.zeros((3, 1)), states=np.zeros((2, 1)))


class TestTrajectorySource:
    def test_matches_per_seed_and_is_independent(self, ms):
        a = TrajectorySource(ms, [0, 1, 2], burn_in=20)
        b = TrajectorySource(ms, [1], burn_in=20)
        ya, la = a.draw(4, [5, 7, 6])
        yb, lb = b.draw(4, [7])
        assert ya.shape == (3, 4, 7, 1)
        np.testing.assert_array_equal(la, [5, 7, 6])
        np.testing.assert_array_equal(ya[1], yb[0])
        assert np.all(ya[0, :, 5:] == 0.0)

    def test_repeatable(self, ms):
        y1, _ = TrajectorySource(ms, [5, 6], burn_in=3).draw(3, 10)
        y2, _ = TrajectorySource(ms, [5, 6], burn_in=3).draw(3, 10)
        np.testing.assert_array_equal(y1, y2)

    def test_stationary_second_moment(self):
        a, N = 0.5, 40_000
        model = SystemModel.scalar(a, q=1.0, r=0.5, p0=0.0)
        ys, _ = TrajectorySource(model, [9], burn_in=60).draw(N, 1)
        var = 1.0 / (1 - a * a) + 0.5
        assert abs(ys[0, :, 0, 0].var() - var) <= 3 * var * math.sqrt(2.0 / N)

    def test_validation(self, ms):
        with pytest.raises(ParameterError):
            TrajectorySource(ms, [0], burn_in=-1)
        with pytest.raises(ParameterError):
            TrajectorySource(ms, [0]).draw(1, 0)


def test_default_burn_in():
    assert default_burn_in(0.5) == math.ceil(math.log(1e-8) / math.log(0.5))
    assert default_burn_in(0.0) == 0
    assert default_burn_in(1.0) == 1000
    assert default_burn_in(0.99999) == 1000


def test_rng_name_recorded():
    assert "Philox" in RNG_ALGORITHM
    assert make_rng(1).standard_normal() == make_rng(1).standard_normal()
