"""Exponential-decay (continuous-time AR(1)) correlation matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .skewnormal import DomainError

XI_MAX = 50.0


class UnsupportedDesign(ValueError):
    """The requested estimator does not support this data layout."""


def build_ar_corr(xi: float, times) -> np.ndarray:
    """Correlation matrix with entries ``exp(-xi |t_j - t_k|)``."""
    if not xi > 0:
        raise DomainError("decay xi must be positive")
    t = np.asarray(times, dtype=float)
    if np.unique(t).size != t.size:
        raise DomainError("duplicate observation times give a singular correlation matrix")
    return np.exp(-xi * np.abs(t[:, None] - t[None, :]))


def default_xi_floor(times) -> float:
    """Lower search bound for ``xi`` scaled by the time spread."""
    t = np.asarray(times, dtype=float)
    spread = float(t.max() - t.min()) if t.size > 1 else 1.0
    return 1e-3 / max(spread, 1e-12)


def empirical_latent_corr(rows, center: bool = True) -> np.ndarray:
    """Correlation matrix of the columns of ``rows`` (one row per unit).

    With ``center=False`` the raw second-moment matrix is normalized instead,
    which is appropriate when the rows are known to have mean zero or when
    the second moments already include a location term.
    """
    r = np.asarray(rows, dtype=float)
    if r.ndim != 2:
        raise UnsupportedDesign("latent scores must form a balanced (m, n) array")
    if r.shape[0] < 2:
        raise UnsupportedDesign("need at least two units")
    if center:
        r = r - r.mean(axis=0)
    return second_moment_to_corr(r.T @ r / r.shape[0])


def second_moment_to_corr(S: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.diag(S))
    C = S / np.outer(d, d)
    C = 0.5 * (C + C.T)
    np.fill_diagonal(C, 1.0)
    return C


@dataclass(frozen=True)
class XiEstimate:
    xi: float
    at_boundary: bool
    objective: float


def l2_objective(xi: float, sigma_hat: np.ndarray, times) -> float:
    return float(np.linalg.norm(sigma_hat - build_ar_corr(xi, times)))


def estimate_xi_l2(sigma_hat, times, xi_bounds=None, tol: float = 1e-8) -> XiEstimate:
    """Least Frobenius distance between ``sigma_hat`` and the AR correlation."""
    S = np.asarray(sigma_hat, dtype=float)
    if xi_bounds is None:
        xi_bounds = (default_xi_floor(times), XI_MAX)
    lo, hi = map(float, xi_bounds)
    if not (0 < lo < hi and np.isfinite(hi)):
        raise DomainError(f"invalid xi interval {xi_bounds}")
    # search on log(xi); the objective is smooth and unimodal there in practice
    f = lambda s: l2_objective(np.exp(s), S, times)
    grid = np.linspace(np.log(lo), np.log(hi), 41)
    vals = np.array([f(s) for s in grid])
    k = int(np.argmin(vals))
    a, b = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = optimize.minimize_scalar(f, bounds=(a, b), method="bounded", options={"xatol": tol})
    s = res.x if res.fun <= vals[k] else grid[k]
    xi = float(np.exp(s))
    boundary = xi <= lo * (1 + 1e-6) or xi >= hi * (1 - 1e-6)
    if k == 0 and vals[0] <= f(np.log(lo) + 1e-9):
        xi, boundary = lo, True
    elif k == grid.size - 1 and vals[-1] <= f(np.log(hi) - 1e-9):
        xi, boundary = hi, True
    return XiEstimate(xi, boundary, l2_objective(xi, S, times))
