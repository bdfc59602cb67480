"""Steady-state prediction-error cost of a constant filter gain and its gradient.

For a gain ``L`` with ``A_L = A - L H`` Schur stable,

    J(L) = tr(X H^T H) + tr(R),   X = A_L X A_L^T + Q + L R L^T,

and the derivative of ``J`` under the trace inner product is

    grad J(L) = 2 Y (L R - A_L X H^T),   Y = A_L^T Y A_L + H^T H.

The module also carries the adjoint (LQR) view of a constant-gain filter and
empirical probes of the landscape (coercivity, gradient dominance).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, InstabilityError, ParameterError
from .kalman import batch_filter
from .matquad import solve_dlyap, spectral_radius, symmetrize
from .sysmodel import make_rng, simulate_batch

BOUNDARY_MARGIN = 1e-4


@dataclass(frozen=True)
class GainPolicy:
    L: np.ndarray
    A_L: np.ndarray
    rho: float

    @property
    def stabilizing(self):
        return self.rho < 1.0

    @classmethod
    def of(cls, model, L):
        if isinstance(L, GainPolicy):
            return L
        L = np.atleast_2d(np.asarray(L, dtype=float))
        if L.shape != (model.n, model.m):
            if L.size == model.n * model.m:
                L = L.reshape(model.n, model.m)
            else:
                raise InputError(f"gain has shape {L.shape}, expected {(model.n, model.m)}")
        A_L = model.A - L @ model.H
        return cls(L=L, A_L=A_L, rho=spectral_radius(A_L))


@dataclass
class CostEvaluation:
    J: float
    X: np.ndarray
    Y: np.ndarray | None = None
    grad: np.ndarray | None = None

    @property
    def grad_norm(self):
        return float(np.linalg.norm(self.grad))


def _require_stable(policy):
    if not policy.stabilizing:
        raise InstabilityError(f"gain is not stabilizing (rho = {policy.rho:.6g})", rho=policy.rho)


def cost(model, L):
    """Steady-state cost ``J(L)``; raises :class:`InstabilityError` off the stabilizing set."""
    p = GainPolicy.of(model, L)
    _require_stable(p)
    W = symmetrize(model.Q + p.L @ model.R @ p.L.T)
    X = solve_dlyap(p.A_L, W).X
    J = float(np.trace(X @ model.H.T @ model.H) + np.trace(model.R))
    return CostEvaluation(J=J, X=X)


def cost_value(model, L):
    """``J(L)`` as a float, with ``math.inf`` for non-stabilizing gains."""
    try:
        return cost(model, L).J
    except InstabilityError:
        return math.inf


def exact_gradient(model, L):
    """Full :class:`CostEvaluation` including ``Y`` and the gradient."""
    p = GainPolicy.of(model, L)
    ev = cost(model, p)
    H = model.H
    Y = solve_dlyap(p.A_L.T, symmetrize(H.T @ H)).X
    ev.Y = Y
    ev.grad = 2.0 * Y @ (p.L @ model.R - p.A_L @ ev.X @ H.T)
    return ev


def cost_difference(model, L, L_new, X=None):
    """``J(L_new) - J(L)`` without subtracting two nearly equal costs.

    With ``D = L_new - L``, ``E = L R - A_L X H^T`` and ``S = H X H^T + R``,
    the covariance change solves
    ``dX = A_new dX A_new^T + D E^T + E D^T + D S D^T``, so the difference
    keeps its relative accuracy when ``D`` is tiny.  Returns ``math.inf`` if
    ``L_new`` is not stabilizing.
    """
    p = GainPolicy.of(model, L)
    q = GainPolicy.of(model, L_new)
    if not q.stabilizing:
        return math.inf
    if X is None:
        X = cost(model, p).X
    H, R = model.H, model.R
    D = q.L - p.L
    E = p.L @ R - p.A_L @ X @ H.T
    S = H @ X @ H.T + R
    F = D @ E.T
    dX = solve_dlyap(q.A_L, symmetrize(F + F.T + D @ S @ D.T)).X
    return float(np.trace(dX @ H.T @ H))


def fd_gradient(f, L, rel_step=1e-6):
    """Central finite differences of a scalar function of a matrix.

    The step for entry ``(i, j)`` is ``rel_step * (1 + |L_ij|)``.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    g = np.empty_like(L)
    for idx in np.ndindex(*L.shape):
        h = rel_step * (1.0 + abs(L[idx]))
        Lp, Lm = L.copy(), L.copy()
        Lp[idx] += h
        Lm[idx] -= h
        g[idx] = (f(Lp) - f(Lm)) / (2.0 * h)
    return g


def finite_horizon_cost_matrix(model, L, T):
    """``X_T(L)`` and the finite-horizon prediction cost ``tr(X_T H^T H) + tr(R)``.

    Stability of ``L`` is not required.
    """
    if T < 1:
        raise ParameterError("horizon T must be >= 1")
    p = GainPolicy.of(model, L)
    W = model.Q + p.L @ model.R @ p.L.T
    X = np.array(model.P0, dtype=float)
    for _ in range(T):
        X = p.A_L @ X @ p.A_L.T + W
    X = symmetrize(X)
    J_T = float(np.trace(X @ model.H.T @ model.H) + np.trace(model.R))
    return X, J_T


@dataclass
class AdjointRollout:
    a: np.ndarray
    z: np.ndarray  # rows z(T), z(T-1), ..., z(0)
    u: np.ndarray  # rows u(1), ..., u(T)
    b: np.ndarray
    lqr_cost: float


def adjoint_rollout(model, L, a, T):
    """Backward adjoint rollout under the feedback ``u(t) = L^T z(t)``.

    With this feedback ``z(t) = (A_L^T)^(T-t) a`` and the optimal ``b`` is
    ``z(0)``, which zeroes the initial-mean term of the LQR cost.
    """
    if T < 1:
        raise ParameterError("horizon T must be >= 1")
    p = GainPolicy.of(model, L)
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape != (model.n,):
        raise InputError(f"a must have length {model.n}")
    z = np.empty((T + 1, model.n))
    z[0] = a
    for k in range(1, T + 1):
        z[k] = p.A_L.T @ z[k - 1]
    # z[k] is z(T - k); u(t) = L^T z(t) for t = 1..T
    u = np.array([p.L.T @ z[T - t] for t in range(1, T + 1)])
    b = z[T].copy()
    lqr = float(b @ model.P0 @ b)
    for t in range(1, T + 1):
        zt = z[T - t]
        lqr += float(zt @ model.Q @ zt + u[t - 1] @ model.R @ u[t - 1])
    return AdjointRollout(a=a, z=z, u=u, b=b, lqr_cost=lqr)


def _mc_compare(samples, target):
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else 0.0
    return {
        "mc_mean": mean,
        "std_err": se,
        "closed_form": float(target),
        "z_score": (mean - target) / se if se > 0 else (0.0 if mean == target else math.inf),
        "pass": abs(mean - target) <= 3.0 * se if se > 0 else math.isclose(mean, target, rel_tol=1e-9, abs_tol=1e-12),
    }


def duality_check(model, L, a, T, num_samples, seed, rel_tol=1e-9):
    """Per-sample adjoint pairing plus Monte Carlo checks of the LQR/estimation identity.

    Trajectories start at ``x(0) ~ N(m0, P0)`` with no burn-in, matching the
    finite-horizon cost ``X_T(L)``.
    """
    if num_samples < 1:
        raise ParameterError("num_samples must be >= 1")
    p = GainPolicy.of(model, L)
    adj = adjoint_rollout(model, p, a, T)
    ys, xs = simulate_batch(model, num_samples, T + 1, make_rng(seed), keep_states=True)
    roll = batch_filter(model.public, p.L, ys)

    # b^T m0 + sum_t u(t+1)^T y(t)  versus  a^T x_hat(T)
    lhs = adj.b @ model.m0 + np.einsum("tm,itm->i", adj.u, ys[:, :T])
    rhs = roll.x_hat @ adj.a
    gap = np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))
    pairing = {"max_rel_gap": float(gap.max()), "tol": rel_tol, "pass": bool(gap.max() <= rel_tol)}

    X_T, J_T = finite_horizon_cost_matrix(model, p, T)
    state_err = (xs[:, T] - roll.x_hat) @ adj.a
    lqr = _mc_compare(state_err**2, adj.a @ X_T @ adj.a)
    lqr["lqr_cost"] = adj.lqr_cost
    pred = _mc_compare(np.sum(roll.error**2, axis=1), J_T)
    return {
        "T": T,
        "num_samples": num_samples,
        "seed": seed,
        "pairing": pairing,
        "state_error": lqr,
        "prediction_error": pred,
        "pass": pairing["pass"] and lqr["pass"] and pred["pass"],
    }


@dataclass
class CoercivityProfile:
    s: np.ndarray
    J: np.ndarray
    rho: np.ndarray
    boundary_s: float | None
    J_star: float
    bounded: bool = True
    notes: list = field(default_factory=list)

    @property
    def peak_ratio(self):
        return float(self.J[-1] / self.J_star)

    @property
    def monotone_tail(self):
        return bool(np.all(np.diff(self.J) > 0))


def coercivity_probe(model, L_star, direction, steps=20, margin=BOUNDARY_MARGIN, s_max=1e8):
    """Evaluate ``J`` along ``L_star + s * direction`` toward the edge of the stabilizing set.

    If the ray leaves the set, the boundary parameter is bisected to
    ``rho(A_L) = 1 - margin`` and ``J`` is sampled at ``s_b (1 - 2^-k)``.
    If it never leaves (possible when ``m >= 2``), ``s`` grows geometrically
    instead and the profile shows ``J`` growing with ``||L||``.
    """
    D = np.atleast_2d(np.asarray(direction, dtype=float)).reshape(model.n, model.m)
    dn = float(np.linalg.norm(D))
    if dn == 0.0:
        raise ParameterError("direction must be nonzero")
    p0 = GainPolicy.of(model, L_star)
    _require_stable(p0)
    target = 1.0 - margin

    def rho_at(s):
        return GainPolicy.of(model, p0.L + s * D).rho

    hi = 1.0 / dn
    while rho_at(hi) < target and hi * dn < s_max:
        hi *= 2.0
    if rho_at(hi) < target:
        s = np.geomspace(1.0 / dn, hi, steps)
        boundary = None
    else:
        lo = 0.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if rho_at(mid) < target:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * hi:
                break
        boundary = lo
        s = boundary * (1.0 - 0.5 ** np.arange(steps))
        s[-1] = boundary
    J = np.array([cost(model, p0.L + si * D).J for si in s])
    rho = np.array([rho_at(si) for si in s])
    return CoercivityProfile(
        s=s,
        J=J,
        rho=rho,
        boundary_s=boundary,
        J_star=cost(model, p0).J,
        bounded=boundary is not None,
    )


@dataclass
class LandscapeSample:
    L: np.ndarray  # (k, n, m)
    J: np.ndarray
    grad_norm_sq: np.ndarray
    dist_sq: np.ndarray
    J_star: float
    level: float
    scale: float
    acceptance: float

    @property
    def dominance_ratio(self):
        """``(J - J*) / ||grad J||_F^2``; bounded above on a sublevel set."""
        return (self.J - self.J_star) / self.grad_norm_sq

    @property
    def quadratic_ratio(self):
        """``(J - J*) / ||L - L*||_F^2``; bounded below by a positive constant."""
        return (self.J - self.J_star) / self.dist_sq


def sample_sublevel_set(model, L_star, level, num_samples=200, seed=0, max_draws=100_000):
    """Rejection-sample gains ``L_star + scale * N(0, I)`` inside ``{J <= level}``.

    ``scale`` is tuned on a pilot batch so roughly half the draws are accepted.
    """
    rng = make_rng(seed)
    p = GainPolicy.of(model, L_star)
    J_star = cost(model, p).J
    if level <= J_star:
        raise ParameterError("level must exceed the optimal cost")

    def accept_rate(scale, k=64):
        draws = p.L + scale * rng.standard_normal((k,) + p.L.shape)
        return np.mean([cost_value(model, d) <= level for d in draws])

    lo, hi = 0.0, 1.0 + float(np.abs(p.L).max())
    while accept_rate(hi) > 0.5:
        hi *= 2.0
    for _ in range(20):
        mid = 0.5 * (lo + hi)
        if accept_rate(mid) > 0.5:
            lo = mid
        else:
            hi = mid
    scale = 0.5 * (lo + hi)

    Ls, Js, g2, d2 = [], [], [], []
    draws = 0
    while len(Ls) < num_samples and draws < max_draws:
        draws += 1
        cand = p.L + scale * rng.standard_normal(p.L.shape)
        if cost_value(model, cand) > level:
            continue
        ev = exact_gradient(model, cand)
        Ls.append(cand)
        Js.append(ev.J)
        g2.append(float(np.sum(ev.grad**2)))
        d2.append(float(np.sum((cand - p.L) ** 2)))
    return LandscapeSample(
        L=np.array(Ls),
        J=np.array(Js),
        grad_norm_sq=np.array(g2),
        dist_sq=np.array(d2),
        J_star=J_star,
        level=level,
        scale=scale,
        acceptance=len(Ls) / max(draws, 1),
    )
