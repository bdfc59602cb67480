"""Dense small-matrix kernels: spectral radius, Schur test, discrete Lyapunov solver."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, InstabilityError, NumericalError, ParameterError

DEFAULT_TOL = 1e-12
_MAX_DOUBLING = 64


@dataclass(frozen=True)
class LyapunovSolution:
    """Solution of ``X = F X F^T + W``."""

    X: np.ndarray
    residual_norm: float
    iterations: int


def as_square(M, name="M"):
    """Return ``M`` as a finite float square matrix, or raise :class:`InputError`."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise InputError(f"{name} must be a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InputError(f"{name} has non-finite entries")
    return M


def spectral_radius(M):
    """Largest eigenvalue modulus of a real square matrix."""
    M = as_square(M)
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def is_schur(M, margin=0.0):
    """True iff ``spectral_radius(M) < 1 - margin``."""
    if not 0.0 <= margin < 1.0:
        raise ParameterError(f"margin must lie in [0, 1), got {margin}")
    return spectral_radius(M) < 1.0 - margin


def symmetrize(X):
    return 0.5 * (X + X.T)


def lyapunov_residual(F, X, W):
    """Frobenius norm of ``X - F X F^T - W``."""
    return _fro(X - F @ X @ F.T - W)


def solve_dlyap(F, W, tol=DEFAULT_TOL):
    """Solve the discrete Lyapunov equation ``X = F X F^T + W`` by Smith doubling.

    The iteration ``X <- X + F X F^T, F <- F @ F`` sums the series
    ``sum_t F^t W (F^T)^t`` in blocks of doubling length, so it needs about
    ``log2(log(eps) / log(rho(F)))`` steps.

    Parameters
    ----------
    F : (n, n) array_like
        Schur-stable matrix.
    W : (n, n) array_like
        Symmetric forcing term.
    tol : float
        Residual tolerance, relative to ``max(1, ||X||_F)``.

    Raises
    ------
    InstabilityError
        If ``rho(F) >= 1``; the series diverges.
    NumericalError
        If the returned solution misses the residual contract.
    """
    F = as_square(F, "F")
    W = as_square(W, "W")
    if F.shape != W.shape:
        raise InputError(f"F {F.shape} and W {W.shape} differ in shape")
    if np.abs(W - W.T).max() > 1e-10 * max(1.0, np.abs(W).max()):
        raise InputError("W must be symmetric")
    rho = spectral_radius(F)
    if rho >= 1.0:
        raise InstabilityError(f"spectral radius {rho:.6g} >= 1", rho=rho)

    X = symmetrize(W)
    Fk = F.copy()
    it = 0
    for it in range(1, _MAX_DOUBLING + 1):
        if _fro(Fk) < 1e-16:
            break
        step = Fk @ X @ Fk.T
        X = symmetrize(X + step)
        Fk = Fk @ Fk
        if _fro(step) <= 1e-17 * max(1.0, _fro(X)):
            break
        if not np.isfinite(X).all():
            raise NumericalError("Smith iteration overflowed")

    res = lyapunov_residual(F, X, W)
    if res > tol * max(1.0, _fro(X)):
        raise NumericalError(f"Lyapunov residual {res:.3g} exceeds tolerance")
    return LyapunovSolution(X=X, residual_norm=res, iterations=it)


def _fro(M):
    return math.sqrt(float(np.vdot(M, M)))
