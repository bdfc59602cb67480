"""Policy updates for the filter gain: gradient descent, gradient flow, and SGD.

Every loop keeps its iterates inside the set of stabilizing gains by
rejecting (and halving) steps that leave it.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, InstabilityError, ParameterError, StepFailureError
from .estimator import default_window, ensemble_gradients
from .kalman import dare_gain
from .matquad import spectral_radius
from .objective import GainPolicy, cost, cost_difference, cost_value, exact_gradient
from .sysmodel import SystemModel, default_burn_in, is_observable

MAX_HALVINGS = 60
TRACE_COLUMNS = ("k", "J", "J_norm", "grad_norm", "eta", "rho", "gain_err")


@dataclass
class StepPolicy:
    kind: str = "backtracking"  # fixed | backtracking | decaying
    eta0: float = 1.0
    backtrack_factor: float = 0.5
    armijo_c: float = 1e-4
    decay_exponent: float = 0.6

    def __post_init__(self):
        if self.kind not in ("fixed", "backtracking", "decaying"):
            raise ParameterError(f"unknown step policy {self.kind!r}")
        if not self.eta0 > 0:
            raise ParameterError("eta0 must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise ParameterError("backtrack_factor must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ParameterError("armijo_c must lie in (0, 1)")

    def eta(self, k):
        if self.kind == "decaying":
            return self.eta0 / (1.0 + k) ** self.decay_exponent
        return self.eta0


@dataclass
class TraceRecord:
    k: int
    L: np.ndarray
    J: float
    grad_norm: float
    eta: float
    rho: float
    gain_err: float | None = None
    batch_error: float | None = None
    decrease: float | None = None  # J(L_k) - J(L_{k-1}), evaluated directly


@dataclass
class OptimizerTrace:
    records: list = field(default_factory=list)
    terminal_status: str = "max_iter"  # converged | max_iter | failed
    message: str = ""
    method: str = ""

    def __len__(self):
        return len(self.records)

    @property
    def final(self):
        return self.records[-1]

    def column(self, name):
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records])

    @property
    def gains(self):
        return np.array([r.L for r in self.records])

    def rows(self):
        J0 = self.records[0].J if self.records else math.nan
        for r in self.records:
            yield {
                "k": r.k,
                "J": r.J,
                "J_norm": r.J / J0 if J0 and math.isfinite(J0) else math.nan,
                "grad_norm": r.grad_norm,
                "eta": r.eta,
                "rho": r.rho,
                "gain_err": "" if r.gain_err is None else r.gain_err,
            }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: v if isinstance(v, str) else repr(v) for k, v in row.items()})


class CostOracle:
    """Sealed evaluator of the true cost, used only for reporting.

    Optimizers in blind mode receive this object but never the covariances.
    """

    def __init__(self, model):
        self.__model = model
        self.L_inf = dare_gain(model).L_inf
        self.J_star = cost_value(model, self.L_inf)

    def cost(self, L):
        return cost_value(self.__model, L)

    def gain_error(self, L):
        return float(np.linalg.norm(np.asarray(L) - self.L_inf))


def initial_gain(model):
    """A stabilizing starting gain computed from ``A`` and ``H`` only.

    Zero when ``A`` is already Schur; otherwise the steady-state gain for the
    surrogate covariances ``Q = I``, ``R = I``.
    """
    A, H = model.A, model.H
    ok, _ = is_observable(A, H)
    if not ok:
        raise InputError("(A, H) is not observable")
    n, m = A.shape[0], H.shape[0]
    if spectral_radius(A) < 1.0:
        return GainPolicy.of(model, np.zeros((n, m)))
    surrogate = SystemModel(A=A, H=H, Q=np.eye(n), R=np.eye(m), P0=np.eye(n), m0=np.zeros(n))
    return GainPolicy.of(model, dare_gain(surrogate).L_inf)


def backtracking_step(model, L, g, policy):
    """Armijo backtracking from ``policy.eta0`` with rejection of non-stabilizing candidates.

    The decrease ``J(L - eta g) - J(L)`` is evaluated directly (see
    :func:`cost_difference`), so the test stays meaningful when the two costs
    agree to machine precision.  Returns ``(L_next, eta)``.
    """
    L_next, eta, _ = _armijo(model, L, g, policy)
    return L_next, eta


def _armijo(model, L, g, policy, X=None):
    L = GainPolicy.of(model, L).L
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise InputError("gradient has non-finite entries")
    g2 = float(np.sum(g * g))
    if g2 == 0.0:
        return L.copy(), policy.eta0, 0.0
    if X is None:
        X = cost(model, L).X
    eta = policy.eta0
    for _ in range(MAX_HALVINGS + 1):
        cand = L - eta * g
        dJ = cost_difference(model, L, cand, X)
        if dJ <= -policy.armijo_c * eta * g2:
            return cand, eta, dJ
        eta *= policy.backtrack_factor
    raise StepFailureError(f"no acceptable step after {MAX_HALVINGS} halvings")


def _stable_step(model, L, g, eta, factor=0.5):
    for _ in range(MAX_HALVINGS + 1):
        cand = L - eta * g
        if GainPolicy.of(model, cand).stabilizing:
            return cand, eta
        eta *= factor
    raise StepFailureError(f"every step left the stabilizing set after {MAX_HALVINGS} halvings")


def _record(model, k, L, ev, eta, L_ref, dJ=None):
    p = GainPolicy.of(model, L)
    err = None if L_ref is None else float(np.linalg.norm(p.L - L_ref))
    return TraceRecord(
        k=k, L=p.L.copy(), J=ev.J, grad_norm=ev.grad_norm, eta=eta, rho=p.rho, gain_err=err, decrease=dJ
    )


def gd_run(model, L0, policy=None, grad_tol=1e-9, max_iter=1000, L_ref=None):
    """Gradient descent ``L <- L - eta grad J(L)`` with exact gradients.

    ``L_ref`` (typically the steady-state Kalman gain) fills the ``gain_err`` column.
    """
    policy = policy or StepPolicy()
    L = GainPolicy.of(model, L0)
    if not L.stabilizing:
        raise InstabilityError("initial gain is not stabilizing", rho=L.rho)
    L = L.L
    trace = OptimizerTrace(method=f"gd/{policy.kind}")
    eta, dJ = 0.0, None
    for k in range(max_iter + 1):
        ev = exact_gradient(model, L)
        trace.records.append(_record(model, k, L, ev, eta, L_ref, dJ))
        if ev.grad_norm <= grad_tol:
            trace.terminal_status = "converged"
            return trace
        if k == max_iter:
            break
        if policy.kind == "backtracking":
            L, eta, dJ = _armijo(model, L, ev.grad, policy, ev.X)
        else:
            L_prev = L
            L, eta = _stable_step(model, L, ev.grad, policy.eta(k), policy.backtrack_factor)
            dJ = cost_difference(model, L_prev, L, ev.X)
    trace.terminal_status = "max_iter"
    return trace


def gf_run(model, L0, step_h, grad_tol=1e-9, max_iter=1000, L_ref=None):
    """Explicit Euler integration of the gradient flow ``dL/ds = -grad J(L)``.

    The step ``h`` is halved (permanently) whenever a step would leave the
    stabilizing set or increase ``J``, so ``J`` is nonincreasing along the trace.
    """
    if not step_h > 0:
        raise ParameterError("step_h must be positive")
    L = GainPolicy.of(model, L0)
    if not L.stabilizing:
        raise InstabilityError("initial gain is not stabilizing", rho=L.rho)
    L = L.L
    h = float(step_h)
    trace = OptimizerTrace(method="gf")
    eta, dJ = 0.0, None
    for k in range(max_iter + 1):
        ev = exact_gradient(model, L)
        trace.records.append(_record(model, k, L, ev, eta, L_ref, dJ))
        if ev.grad_norm <= grad_tol:
            trace.terminal_status = "converged"
            return trace
        if k == max_iter:
            break
        for _ in range(MAX_HALVINGS + 1):
            cand = L - h * ev.grad
            dJ = cost_difference(model, L, cand, ev.X)
            if dJ <= 0.0:
                break
            h *= 0.5
        else:
            raise StepFailureError(f"gradient flow step failed after {MAX_HALVINGS} halvings")
        L, eta = cand, h
    trace.terminal_status = "max_iter"
    return trace


def sgd_ensemble(
    public,
    source,
    L0,
    schedule=None,
    batch_size=64,
    iters=2000,
    window=None,
    oracle=None,
):
    """Minibatch SGD from measurements only, one independent run per seed of ``source``.

    Each iteration draws ``batch_size`` fresh trajectories per seed and steps
    ``L <- L - eta_k * mean_i grad ||e_i||^2``.  A step leaving the stabilizing
    set is halved until it stays inside; a seed whose step fails
    ``MAX_HALVINGS`` times is stopped with status ``failed``.

    Parameters
    ----------
    public : PublicModel
        ``A``, ``H`` and ``m0``; covariances are never consulted.
    source : TrajectorySource
    window : int, optional
        Number of filter inputs ``T`` per trajectory.  By default chosen per
        seed and iteration so that ``rho(A_L)**T <= 1e-8``.
    oracle : CostOracle, optional
        Fills the ``J`` and ``gain_err`` columns with true values.  Without it
        ``J`` is the batch mean squared prediction error.

    Returns
    -------
    list of OptimizerTrace, one per seed.
    """
    schedule = schedule or StepPolicy(kind="decaying", eta0=0.05)
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    p0 = GainPolicy.of(public, L0)
    if not p0.stabilizing:
        raise InstabilityError("initial gain is not stabilizing", rho=p0.rho)
    S = len(source.seeds)
    Ls = np.repeat(p0.L[None], S, axis=0)
    etas = np.zeros(S)
    alive = np.ones(S, dtype=bool)
    traces = [OptimizerTrace(method=f"sgd/{schedule.kind}") for _ in range(S)]
    for k in range(iters + 1):
        rhos = np.array([spectral_radius(public.A - L @ public.H) for L in Ls])
        if window is None:
            wins = np.array([default_window(r) for r in rhos])
        else:
            wins = np.full(S, int(window))
        ys, lengths = source.draw(batch_size, wins + 1)
        grads, errors = ensemble_gradients(public, Ls, ys, lengths, wins)
        ghat = grads.mean(axis=1)
        batch_err = np.mean(np.sum(errors**2, axis=-1), axis=1)
        for s in np.flatnonzero(alive):
            J = oracle.cost(Ls[s]) if oracle is not None else float(batch_err[s])
            traces[s].records.append(
                TraceRecord(
                    k=k,
                    L=Ls[s].copy(),
                    J=J,
                    grad_norm=float(np.linalg.norm(ghat[s])),
                    eta=float(etas[s]),
                    rho=float(rhos[s]),
                    gain_err=None if oracle is None else oracle.gain_error(Ls[s]),
                    batch_error=float(batch_err[s]),
                )
            )
        if k == iters:
            break
        eta_k = schedule.eta(k)
        for s in np.flatnonzero(alive):
            try:
                Ls[s], etas[s] = _stable_step(public, Ls[s], ghat[s], eta_k, schedule.backtrack_factor)
            except StepFailureError as exc:
                alive[s] = False
                traces[s].terminal_status = "failed"
                traces[s].message = str(exc)
    return traces


def sgd_run(public, source, L0, schedule=None, batch_size=64, iters=2000, window=None, oracle=None):
    """Single-seed SGD; ``source`` must carry exactly one seed."""
    if len(source.seeds) != 1:
        raise ParameterError("sgd_run expects a single-seed source; use sgd_ensemble")
    trace = sgd_ensemble(public, source, L0, schedule, batch_size, iters, window, oracle)[0]
    if trace.terminal_status == "failed":
        raise StepFailureError(trace.message)
    return trace


def reference_burn_in(model):
    """Burn-in from the mixing rate of the stabilizing initial gain."""
    return default_burn_in(initial_gain(model).rho)
