"""Measurement-only stochastic gradient of the squared prediction error.

For one window ``y(0..T)`` and gain ``L`` let ``e = y(T) - H x_hat(T)``.
Differentiating the filter recursion gives

    grad_L ||e||^2 = -2 sum_j (A_L^T)^j H^T e nu(T-1-j)^T,

where ``nu(t) = y(t) - H x_hat(t)`` are the filter innovations.  Expanding
``nu`` into measurements recovers the two-sum form (a single sum over past
measurements and a double sum through ``L``); grouping it by innovations
makes it O(T) per sample.  Only ``A``, ``H``, ``m0`` and the data are read.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, InstabilityError, ParameterError
from .kalman import batch_filter
from .matquad import spectral_radius
from .sysmodel import Trajectory

TRUNCATION_TOL = 1e-12
WINDOW_TARGET = 1e-8
MAX_WINDOW = 1000


@dataclass
class SampleGradient:
    grad: np.ndarray
    error_vector: np.ndarray
    truncation_depth: int


@dataclass
class MinibatchGradient:
    mean_grad: np.ndarray
    per_entry_std_err: np.ndarray
    batch_size: int
    mean_sq_error: float


def default_window(rho, target=WINDOW_TARGET, cap=MAX_WINDOW):
    """Smallest ``W`` with ``rho**W <= target``, capped at ``cap``."""
    if rho <= 0.0:
        return 1
    if rho >= 1.0:
        return cap
    W = max(1, math.ceil(math.log(target) / math.log(rho)))
    if W > 1 and rho ** (W - 1) <= target:  # log ratio rounded up past an exact power
        W -= 1
    return int(min(cap, W))


def _gain(public, L):
    L = np.atleast_2d(np.asarray(getattr(L, "L", L), dtype=float))
    n, m = public.A.shape[0], public.H.shape[0]
    if L.shape != (n, m):
        raise InputError(f"gain has shape {L.shape}, expected {(n, m)}")
    AL = public.A - L @ public.H
    rho = spectral_radius(AL)
    if rho >= 1.0:
        raise InstabilityError(f"gain is not stabilizing (rho = {rho:.6g})", rho=rho)
    return L, AL


def adjoint_powers(AL, H, depth, tol=TRUNCATION_TOL):
    """Stack ``(A_L^T)^j H^T`` for ``j < depth``, stopping once ``||A_L^j||_F < tol``."""
    out = []
    P = np.eye(AL.shape[0])
    for _ in range(depth):
        if np.linalg.norm(P) < tol:
            break
        out.append(P.T @ H.T)
        P = AL @ P
    if not out:
        return np.zeros((0, AL.shape[0], H.shape[0]))
    return np.array(out)


def batched_adjoint_powers(ALs, H, depth, tol=TRUNCATION_TOL):
    """``adjoint_powers`` for a stack of closed-loop matrices, zero-padded to a common depth."""
    S, n, _ = ALs.shape
    depth = np.asarray(depth, dtype=int)
    jmax = int(depth.max()) if S else 0
    out = np.zeros((S, jmax, n, H.shape[0]))
    P = np.broadcast_to(np.eye(n), (S, n, n)).copy()
    live = np.ones(S, dtype=bool)
    Ht = H.T
    for j in range(jmax):
        live &= (depth > j) & (np.sqrt(np.einsum("sab,sab->s", P, P)) >= tol)
        if not live.any():
            return out[:, :j]
        out[live, j] = np.transpose(P[live], (0, 2, 1)) @ Ht
        P = ALs @ P
    return out


def _as_windows(batch):
    if isinstance(batch, Trajectory):
        return batch.measurements[None]
    if isinstance(batch, np.ndarray):
        return batch if batch.ndim == 3 else batch[None]
    if len(batch) == 0:
        raise ParameterError("batch must be nonempty")
    arrs = [b.measurements if isinstance(b, Trajectory) else np.atleast_2d(b) for b in batch]
    if len({a.shape for a in arrs}) != 1:
        raise InputError("all trajectories in a batch must share a window length")
    return np.stack(arrs)


def sample_gradients(public, L, windows):
    """Per-sample gradients for a stack of windows ``(M, T+1, m)``.

    Returns ``(grads, errors, depth)`` with ``grads`` of shape ``(M, n, m)``.
    """
    L, AL = _gain(public, L)
    ys = _as_windows(windows)
    roll = batch_filter(public, L, ys)
    T = ys.shape[1] - 1
    V = adjoint_powers(AL, public.H, T)
    depth = V.shape[0]
    # innovations reversed in time: nu(T-1-j) for j = 0..depth-1
    nu_rev = roll.innovations[:, ::-1][:, :depth]
    grads = -2.0 * np.einsum("jab,ib,ijc->iac", V, roll.error, nu_rev)
    return grads, roll.error, depth


def sample_gradient(public, L, traj):
    """Gradient of ``||y(T) - y_hat_L(T)||^2`` for one trajectory."""
    grads, errors, depth = sample_gradients(public, L, traj)
    return SampleGradient(grad=grads[0], error_vector=errors[0], truncation_depth=depth)


def squared_error(public, L, traj):
    """``||e_T(L)||^2`` for one trajectory; the scalar ``sample_gradient`` differentiates."""
    L = np.atleast_2d(np.asarray(L, dtype=float))
    roll = batch_filter(public, L, _as_windows(traj))
    return float(np.sum(roll.error[0] ** 2))


def summarize(grads, errors):
    M = grads.shape[0]
    mean = grads.mean(axis=0)
    if M > 1:
        se = grads.std(axis=0, ddof=1) / math.sqrt(M)
    else:
        se = np.zeros_like(mean)
    return MinibatchGradient(
        mean_grad=mean,
        per_entry_std_err=se,
        batch_size=M,
        mean_sq_error=float(np.mean(np.sum(errors**2, axis=-1))),
    )


def minibatch_gradient(public, L, batch):
    """Average of per-trajectory gradients, with per-entry standard errors."""
    ys = _as_windows(batch)
    if ys.shape[0] == 0:
        raise ParameterError("batch must be nonempty")
    grads, errors, _ = sample_gradients(public, L, ys)
    return summarize(grads, errors)


def ensemble_gradients(public, Ls, ys, lengths, depth):
    """Gradients for several gains at once, each with its own batch.

    Parameters
    ----------
    Ls : (S, n, m) array
    ys : (S, M, N, m) array
        Seed ``s`` uses rows ``0 .. lengths[s] - 1`` as its window ``y(0..T_s)``.
    lengths : (S,) int array
    depth : (S,) int array
        Maximum number of adjoint terms kept per seed.

    Returns
    -------
    grads : (S, M, n, m), errors : (S, M, m)
    """
    S, M, N, m = ys.shape
    A, H = public.A, public.H
    n = A.shape[0]
    T = np.asarray(lengths, dtype=int) - 1
    AL = A[None] - Ls @ H[None]
    ALt = np.transpose(AL, (0, 2, 1))
    Lt = np.transpose(Ls, (0, 2, 1))
    Ht = H.T
    ys_t = np.transpose(ys, (2, 0, 1, 3))  # (N, S, M, m)

    x = np.broadcast_to(public.m0, (S, M, n)).copy()
    xT = np.empty_like(x)
    nu = np.empty((max(N - 1, 1), S, M, m))
    for t in range(N):
        done = T == t
        if done.any():
            xT[done] = x[done]
        if t == N - 1:
            break
        nu[t] = ys_t[t] - x @ Ht
        x = x @ ALt + ys_t[t] @ Lt
    errors = ys_t[T, np.arange(S)] - xT @ Ht

    keep = np.minimum(np.asarray(depth, dtype=int), T)
    Vs = batched_adjoint_powers(AL, H, keep)
    J = Vs.shape[1]
    if J == 0:
        return np.zeros((S, M, n, m)), errors
    # nu(T_s - 1 - j), clipped where the seed has no such term (its V is zero there)
    idx = np.clip(T[:, None] - 1 - np.arange(J)[None], 0, None)
    nu_sel = nu[idx, np.arange(S)[:, None]]  # (S, J, M, m)
    U = np.einsum("sjab,sib->siaj", Vs, errors)
    grads = -2.0 * U @ np.transpose(nu_sel, (0, 2, 1, 3))
    return grads, errors
