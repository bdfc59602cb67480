"""Linear time-invariant system model, observability, and seeded simulation.

The model is

    x(t+1) = A x(t) + xi(t),      xi ~ N(0, Q)
    y(t)   = H x(t) + omega(t),   omega ~ N(0, R)

with ``x(t0) ~ N(m0, P0)``.  Randomness comes from numpy's Philox
counter-based generator so trajectories are reproducible from an integer seed.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParameterError
from .matquad import spectral_radius

RNG_ALGORITHM = "numpy.random.Philox (Philox4x64-10)"
MAX_TRAJECTORY_STEPS = 10_000
MAX_BURN_IN = 1000


def make_rng(seed):
    """Seeded generator used for every simulation in the package."""
    return np.random.Generator(np.random.Philox(seed))


def _matrix(value, name, shape=None):
    M = np.atleast_2d(np.asarray(value, dtype=float))
    if M.ndim != 2:
        raise InputError(f"{name} must be a matrix")
    if shape is not None and M.shape != shape:
        raise InputError(f"{name} has shape {M.shape}, expected {shape}")
    if not np.all(np.isfinite(M)):
        raise InputError(f"{name} has non-finite entries")
    return M


@dataclass(frozen=True)
class PublicModel:
    """The part of a system a learner is allowed to see: ``A``, ``H`` and ``m0``."""

    A: np.ndarray
    H: np.ndarray
    m0: np.ndarray

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.H.shape[0]


@dataclass(frozen=True)
class SystemModel:
    A: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    P0: np.ndarray
    m0: np.ndarray

    def __post_init__(self):
        A = _matrix(self.A, "A")
        if A.shape[0] != A.shape[1]:
            raise InputError(f"A must be square, got {A.shape}")
        H = _matrix(self.H, "H")
        Q = _matrix(self.Q, "Q")
        R = _matrix(self.R, "R")
        P0 = _matrix(self.P0, "P0")
        m0 = np.asarray(self.m0, dtype=float).reshape(-1)
        for name, arr in (("A", A), ("H", H), ("Q", Q), ("R", R), ("P0", P0), ("m0", m0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def scalar(cls, a, h=1.0, q=1.0, r=1.0, p0=1.0, m0=0.0):
        return cls(A=[[a]], H=[[h]], Q=[[q]], R=[[r]], P0=[[p0]], m0=[m0])

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.H.shape[0]

    @property
    def public(self):
        return PublicModel(A=self.A, H=self.H, m0=self.m0)

    def replace(self, **changes):
        fields = {k: getattr(self, k) for k in ("A", "H", "Q", "R", "P0", "m0")}
        fields.update(changes)
        return SystemModel(**fields)

    def check_dimensions(self):
        """Raise :class:`InputError` unless all shapes agree."""
        n, m = self.n, self.m
        expected = {"H": (m, n), "Q": (n, n), "R": (m, m), "P0": (n, n)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InputError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.m0.shape != (n,):
            raise InputError(f"m0 has length {self.m0.size}, expected {n}")

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("A", "H", "Q", "R", "P0", "m0")}

    @classmethod
    def from_dict(cls, data):
        missing = [k for k in ("A", "H", "Q", "R", "P0", "m0") if k not in data]
        if missing:
            raise InputError(f"model is missing keys {missing}")
        model = cls(**{k: data[k] for k in ("A", "H", "Q", "R", "P0", "m0")})
        model.check_dimensions()
        return model


def load_model(path):
    with open(path) as fh:
        return SystemModel.from_dict(json.load(fh))


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=2)


@dataclass
class Trajectory:
    """One realization of the measurement process.

    ``measurements`` holds ``y(0), ..., y(T)``: the first ``T`` rows feed the
    filter and the last row is the prediction target, so ``horizon == T``.
    """

    measurements: np.ndarray
    seed: int | None = None
    burn_in: int = 0
    states: np.ndarray | None = None

    def __post_init__(self):
        self.measurements = np.atleast_2d(np.asarray(self.measurements, dtype=float))
        if self.measurements.shape[0] < 1:
            raise InputError("trajectory has no measurements")
        if self.states is not None:
            self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
            if self.states.shape[0] != self.measurements.shape[0]:
                raise InputError("states and measurements differ in length")

    @property
    def window_length(self):
        return self.measurements.shape[0]

    @property
    def horizon(self):
        return self.window_length - 1

    def to_csv(self, path):
        m = self.measurements.shape[1]
        header = ["t"] + [f"y_{i + 1}" for i in range(m)]
        if self.states is not None:
            header += [f"x_{i + 1}" for i in range(self.states.shape[1])]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t in range(self.window_length):
                row = [t] + [repr(float(v)) for v in self.measurements[t]]
                if self.states is not None:
                    row += [repr(float(v)) for v in self.states[t]]
                writer.writerow(row)


def _psd_status(M, tol=1e-10):
    sym = np.allclose(M, M.T, atol=tol * max(1.0, np.abs(M).max()))
    min_eig = float(np.linalg.eigvalsh(0.5 * (M + M.T)).min())
    return sym, min_eig


def is_observable(A, H, tol=1e-10):
    """Rank test on the stacked observability matrix ``[H; HA; ...; HA^(n-1)]``.

    Returns ``(observable, rank)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or H.shape[1] != n:
        raise InputError(f"inconsistent shapes A {A.shape}, H {H.shape}")
    blocks, block = [], H
    for _ in range(n):
        blocks.append(block)
        block = block @ A
    sv = np.linalg.svd(np.vstack(blocks), compute_uv=False)
    rank = int(np.sum(sv > tol * sv[0])) if sv[0] > 0 else 0
    return rank == n, rank


def validate(model):
    """Report dimension, symmetry/PSD and observability status without raising."""
    report = {"dimensions_ok": True, "errors": []}
    try:
        model.check_dimensions()
    except InputError as exc:
        report["dimensions_ok"] = False
        report["errors"].append(str(exc))
    for name in ("Q", "R", "P0"):
        M = getattr(model, name)
        if M.shape[0] != M.shape[1]:
            report[name] = {"symmetric": False, "psd": False, "min_eig": None}
            continue
        sym, min_eig = _psd_status(M)
        psd = sym and min_eig >= -1e-10 * max(1.0, np.abs(M).max())
        report[name] = {"symmetric": sym, "psd": psd, "pd": sym and min_eig > 0, "min_eig": min_eig}
    report["rho_A"] = spectral_radius(model.A)
    if report["dimensions_ok"]:
        obs, rank = is_observable(model.A, model.H)
    else:
        obs, rank = False, None
    report["observable"] = obs
    report["observability_rank"] = rank
    report["ok"] = (
        report["dimensions_ok"]
        and obs
        and all(report[k]["psd"] for k in ("Q", "R", "P0"))
    )
    return report


def noise_factor(C, name="covariance"):
    """Factor ``F`` with ``F F^T = C``; Cholesky when possible, else eigen-based.

    The eigen fallback covers singular PSD matrices such as ``Q = 0``.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    scale = max(1.0, float(np.abs(C).max()))
    if not np.allclose(C, C.T, atol=1e-10 * scale):
        raise InputError(f"{name} is not symmetric")
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    if w.min() < -1e-10 * scale:
        raise InputError(f"{name} is not positive semidefinite (min eigenvalue {w.min():.3g})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def simulate_batch(model, num, window_length, rng, burn_in=0, keep_states=False):
    """Simulate ``num`` independent trajectories at once.

    Returns ``(measurements, states)`` with shapes ``(num, window_length, m)``
    and ``(num, window_length, n)`` (``states`` is None unless requested).
    """
    if window_length < 1:
        raise ParameterError("window_length must be >= 1")
    if burn_in < 0:
        raise ParameterError("burn_in must be >= 0")
    steps = burn_in + window_length
    if steps > MAX_TRAJECTORY_STEPS:
        raise ParameterError(f"trajectory of {steps} steps exceeds cap {MAX_TRAJECTORY_STEPS}")
    n, m = model.n, model.m
    Fq = noise_factor(model.Q, "Q")
    Fr = noise_factor(model.R, "R")
    noise_factor(model.P0, "P0")

    mean0, F0 = burn_in_marginal(model, burn_in)
    x = mean0 + rng.standard_normal((num, n)) @ F0.T
    xi = rng.standard_normal((num, window_length, n)) @ Fq.T
    om = rng.standard_normal((num, window_length, m)) @ Fr.T

    At, Ht = model.A.T, model.H.T
    ys = np.empty((num, window_length, m))
    xs = np.empty((num, window_length, n)) if keep_states else None
    for t in range(window_length):
        ys[:, t] = x @ Ht + om[:, t]
        if keep_states:
            xs[:, t] = x
        x = x @ At + xi[:, t]
    return ys, xs


def burn_in_marginal(model, burn_in):
    """Mean and covariance factor of ``x(B)`` after ``B`` noisy steps from ``N(m0, P0)``.

    Sampling this Gaussian directly is equivalent in distribution to running
    the recursion through the burn-in and discarding it.
    """
    A = model.A
    mean = np.array(model.m0, dtype=float)
    P = np.array(model.P0, dtype=float)
    for _ in range(burn_in):
        mean = A @ mean
        P = A @ P @ A.T + model.Q
    return mean, noise_factor(0.5 * (P + P.T), "burn-in covariance")


def simulate_trajectory(model, burn_in, window_length, seed, keep_states=True):
    """Single seeded trajectory; a pure function of its arguments."""
    ys, xs = simulate_batch(model, 1, window_length, make_rng(seed), burn_in, keep_states)
    return Trajectory(
        measurements=ys[0],
        seed=seed,
        burn_in=burn_in,
        states=None if xs is None else xs[0],
    )


def mass_spring_model(dt=0.1, omega=1.0, q_var=0.1, r_var=0.1, p0_var=0.05):
    """Exactly discretized undamped oscillator observed through its position."""
    if dt <= 0 or omega <= 0:
        raise ParameterError("dt and omega must be positive")
    th = omega * dt
    c, s = math.cos(th), math.sin(th)
    A = [[c, s / omega], [-omega * s, c]]
    return SystemModel(
        A=A,
        H=[[1.0, 0.0]],
        Q=q_var * np.eye(2),
        R=[[r_var]],
        P0=p0_var * np.eye(2),
        m0=np.zeros(2),
    )


def default_burn_in(rho_ref, target=1e-8, cap=MAX_BURN_IN):
    """Smallest ``B`` with ``rho_ref**B <= target``, capped."""
    if rho_ref <= 0.0:
        return 0
    if rho_ref >= 1.0:
        return cap
    B = max(0, math.ceil(math.log(target) / math.log(rho_ref)))
    if B > 0 and rho_ref ** (B - 1) <= target:
        B -= 1
    return min(cap, B)


def _apply_factor(z, F):
    if np.count_nonzero(F - np.diag(np.diagonal(F))) == 0:
        return z * np.diagonal(F)
    return z @ F.T


class TrajectorySource:
    """Seeded measurement oracle for one or more independent seeds.

    Each seed owns a Philox stream, so what seed ``s`` produces depends only
    on ``s`` and the sequence of requests, not on the other seeds.  Callers
    see measurements only; the noise covariances stay inside.
    """

    def __init__(self, model, seeds, burn_in=0):
        if burn_in < 0:
            raise ParameterError("burn_in must be >= 0")
        self._model = model
        self._Fq = noise_factor(model.Q, "Q")
        self._Fr = noise_factor(model.R, "R")
        self._mean0, self._F0 = burn_in_marginal(model, int(burn_in))
        self.seeds = [int(s) for s in np.atleast_1d(seeds)]
        self.burn_in = int(burn_in)
        self._rngs = [make_rng(s) for s in self.seeds]

    @property
    def public(self):
        return self._model.public

    def draw(self, num, window_lengths):
        """Draw ``num`` trajectories per seed.

        Seed ``s`` gets ``window_lengths[s]`` measurements ``y(0..T_s)``,
        stored left-aligned; rows past its length are zero.

        Returns ``(ys, lengths)`` with ``ys`` of shape ``(S, num, Nmax, m)``.
        """
        model = self._model
        S, n, m = len(self.seeds), model.n, model.m
        wl = np.array(np.broadcast_to(np.asarray(window_lengths, dtype=int), (S,)))
        if wl.min() < 1:
            raise ParameterError("window lengths must be >= 1")
        if self.burn_in + wl.max() > MAX_TRAJECTORY_STEPS:
            raise ParameterError(f"trajectory exceeds cap {MAX_TRAJECTORY_STEPS}")
        N = int(wl.max())
        x = np.empty((S * num, n))
        xi = np.zeros((N, S * num, n))
        om = np.zeros((N, S * num, m))
        for s, rng in enumerate(self._rngs):
            rows = slice(s * num, (s + 1) * num)
            x[rows] = self._mean0 + rng.standard_normal((num, n)) @ self._F0.T
            z = rng.standard_normal((wl[s], num, n + m))
            xi[: wl[s], rows] = _apply_factor(z[..., :n], self._Fq)
            om[: wl[s], rows] = _apply_factor(z[..., n:], self._Fr)
        At, Ht = model.A.T, model.H.T
        ys = np.empty((N, S * num, m))
        for t in range(N):
            ys[t] = x @ Ht + om[t]
            x = x @ At + xi[t]
        ys = ys.reshape(N, S, num, m).transpose(1, 2, 0, 3)
        for s in range(S):
            ys[s, :, wl[s]:] = 0.0
        return ys, wl
