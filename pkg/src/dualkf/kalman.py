"""Time-varying Kalman recursion, its steady-state gain, and constant-gain filtering."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConvergenceError, InputError, NumericalError
from .matquad import spectral_radius, symmetrize
from .sysmodel import Trajectory

DARE_TOL = 1e-13
DARE_MAX_ITER = 100_000


@dataclass(frozen=True)
class KalmanSolution:
    P_inf: np.ndarray
    L_inf: np.ndarray
    iterations: int
    residual: float

    def closed_loop_rho(self, model):
        return spectral_radius(model.A - self.L_inf @ model.H)


def kalman_gain(A, H, R, P):
    """``A P H^T (H P H^T + R)^{-1}`` via a Cholesky solve of the innovation covariance."""
    S = H @ P @ H.T + R
    try:
        c = cho_factor(symmetrize(S))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is not positive definite") from exc
    # L = A P H^T S^{-1}  <=>  S L^T = H P A^T
    return cho_solve(c, H @ P @ A.T).T


def kalman_step(P, model):
    """One prediction-form Riccati update. Returns ``(L, P_next)``."""
    P = np.asarray(P, dtype=float)
    A, H = model.A, model.H
    L = kalman_gain(A, H, model.R, P)
    P_next = symmetrize((A - L @ H) @ P @ A.T + model.Q)
    return L, P_next


def dare_gain(model, tol=DARE_TOL, max_iter=DARE_MAX_ITER):
    """Steady-state gain by iterating the Riccati map from ``P = Q``.

    Stops once ``||P+ - P||_F <= tol (1 + ||P||_F)``.
    """
    P = np.array(model.Q, dtype=float)
    for it in range(1, max_iter + 1):
        _, P_next = kalman_step(P, model)
        diff = float(np.linalg.norm(P_next - P))
        P = P_next
        if diff <= tol * (1.0 + np.linalg.norm(P)):
            break
    else:
        raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} steps")
    L = kalman_gain(model.A, model.H, model.R, P)
    rho = spectral_radius(model.A - L @ model.H)
    if rho >= 1.0:
        raise NumericalError(f"steady-state gain is not stabilizing (rho = {rho:.6g})")
    return KalmanSolution(P_inf=P, L_inf=L, iterations=it, residual=diff)


class Rollout(NamedTuple):
    x_hat: np.ndarray
    y_hat: np.ndarray
    error: np.ndarray


def _measurements(traj):
    if isinstance(traj, Trajectory):
        return traj.measurements
    return np.atleast_2d(np.asarray(traj, dtype=float))


def filter_rollout(public, L, traj):
    """Run the constant-gain filter over ``y(0..T-1)`` and predict ``y(T)``.

    ``x_hat(t+1) = A x_hat(t) + L (y(t) - H x_hat(t))`` from ``x_hat(0) = m0``.
    """
    ys = _measurements(traj)
    A, H = public.A, public.H
    L = np.atleast_2d(np.asarray(L, dtype=float))
    if ys.shape[1] != H.shape[0] or L.shape != (A.shape[0], H.shape[0]):
        raise InputError("dimension mismatch between gain, model and measurements")
    AL = A - L @ H
    x = np.array(public.m0, dtype=float)
    for y in ys[:-1]:
        x = AL @ x + L @ y
    y_hat = H @ x
    return Rollout(x_hat=x, y_hat=y_hat, error=ys[-1] - y_hat)


def closed_form_estimate(public, L, ys):
    """``A_L^T m0 + sum_t A_L^(T-t-1) L y(t)`` evaluated with explicit matrix powers."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    L = np.atleast_2d(np.asarray(L, dtype=float))
    AL = public.A - L @ public.H
    T = ys.shape[0]
    est = np.linalg.matrix_power(AL, T) @ public.m0
    for t in range(T):
        est = est + np.linalg.matrix_power(AL, T - t - 1) @ L @ ys[t]
    return est


class BatchRollout(NamedTuple):
    innovations: np.ndarray
    error: np.ndarray
    x_hat: np.ndarray


def batch_filter(public, L, ys, start=None):
    """Vectorized filter over a stack of windows.

    Parameters
    ----------
    ys : (M, T+1, m) array
        ``y(0..T)`` for each sample.
    start : (M,) int array, optional
        Per-sample index at which the filter is (re)started from ``m0``;
        earlier rows are ignored and their innovations are zero.

    Returns
    -------
    BatchRollout
        ``innovations`` (M, T, m) holds ``y(t) - H x_hat(t)`` for ``t < T``;
        ``error`` (M, m) is ``y(T) - H x_hat(T)``; ``x_hat`` (M, n) is the
        terminal estimate.
    """
    A, H = public.A, public.H
    L = np.atleast_2d(np.asarray(L, dtype=float))
    M, N, m = ys.shape
    T = N - 1
    ALt, Lt, Ht = (A - L @ H).T, L.T, H.T
    x = np.broadcast_to(public.m0, (M, A.shape[0])).copy()
    nu = np.zeros((M, T, m))
    for t in range(T):
        if start is None:
            nu[:, t] = ys[:, t] - x @ Ht
            x = x @ ALt + ys[:, t] @ Lt
        else:
            live = (t >= start)[:, None]
            nu[:, t] = np.where(live, ys[:, t] - x @ Ht, 0.0)
            x = np.where(live, x @ ALt + ys[:, t] @ Lt, x)
    return BatchRollout(innovations=nu, error=ys[:, T] - x @ Ht, x_hat=x)
