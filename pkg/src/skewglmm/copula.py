"""Skew-normal copula layer.

Conditionally on the random intercept ``b``, the latent scores of a unit are
``Z ~ SN_n(b 1, Sigma(xi, t), skewness * 1)``. Each response is tied to its
latent score through the probability-integral transform

    z_j = SN_1^{-1}( F(y_j | x_j'beta + b) | b, 1, lam*_j ),

where ``lam*_j`` is the skewness of the j-th latent marginal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .correlation import build_ar_corr
from .data import ModelParams, Unit
from .marginals import MarginalSpec
from .skewnormal import (
    DomainError,
    QuantileTable,
    SkewNormalMV,
    lambda_to_delta,
    sn_cdf_uv,
    sn_logpdf_mv,
    sn_logpdf_uv,
    sn_quantile_uv,
    sn_sample_mv,
    sym_sqrt,
)

U_CLAMP = 1e-15


class ClampCounter:
    """Counts probability-integral values clamped away from 0 and 1."""

    def __init__(self):
        self.count = 0

    def add(self, k: int):
        self.count += int(k)


clamp_counter = ClampCounter()


@dataclass(frozen=True)
class LatentStructure:
    """Everything about the latent law that depends on ``(times, xi, skewness)`` only."""

    times: np.ndarray
    sigma: np.ndarray
    root: np.ndarray  # symmetric Sigma^{1/2}
    delta_star: np.ndarray
    shift: np.ndarray  # Sigma^{1/2} delta*
    psi: np.ndarray
    psi_inv: np.ndarray
    psi_logdet: float
    marg_delta: np.ndarray  # univariate delta_j of each latent marginal
    marg_lam: np.ndarray  # univariate skewness lam*_j
    sigma_inv: np.ndarray
    sigma_logdet: float
    alpha: np.ndarray  # Sigma^{-1/2} lam, the slope inside Phi of the joint density

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def lam(self) -> np.ndarray:
        d = self.delta_star
        return d / np.sqrt(1.0 - d @ d)


@lru_cache(maxsize=4096)
def _structure(times: tuple, xi: float, skewness: float) -> LatentStructure:
    t = np.asarray(times, dtype=float)
    n = t.size
    sigma = build_ar_corr(xi, t)
    root = sym_sqrt(sigma)
    dstar = lambda_to_delta(np.full(n, float(skewness)))
    shift = root @ dstar
    if np.any(np.abs(shift) >= 1.0):
        raise DomainError("latent marginal delta outside (-1, 1)")
    from .posterior import psi_matrix

    psi = psi_matrix(sigma, dstar, root=root)
    sign, logdet = np.linalg.slogdet(psi)
    if sign <= 0:
        raise DomainError("Psi is not positive definite")
    psi_inv = np.linalg.inv(psi)
    psi_inv = 0.5 * (psi_inv + psi_inv.T)
    marg_lam = shift / np.sqrt(1.0 - shift**2)
    sigma_inv = np.linalg.inv(sigma)
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    _, sigma_logdet = np.linalg.slogdet(sigma)
    alpha = np.linalg.solve(root, dstar / np.sqrt(1.0 - dstar @ dstar))
    arrays = (t, sigma, root, dstar, shift, psi, psi_inv)
    for a in arrays + (marg_lam, sigma_inv, alpha):
        a.setflags(write=False)
    return LatentStructure(
        *arrays, float(logdet), shift.copy(), marg_lam, sigma_inv, float(sigma_logdet), alpha
    )


def latent_structure(times, xi: float, skewness: float) -> LatentStructure:
    return _structure(tuple(np.asarray(times, dtype=float).tolist()), float(xi), float(skewness))


@lru_cache(maxsize=4096)
def _table(lam: float) -> QuantileTable:
    return QuantileTable(lam)


PROBIT_CLIP = float(-special.ndtri(U_CLAMP))


def probit_scores(y, eta, marginal: MarginalSpec):
    """``Phi^{-1}(F(y | eta))`` clipped to the same range as the clamped PIT."""
    return np.clip(marginal.probit(y, eta), -PROBIT_CLIP, PROBIT_CLIP)


def latent_from_probit(x, structure: LatentStructure):
    """Latent residuals ``w = z - b`` from probit scores (trailing axis ``n``).

    Interpolates the skew-normal quantile with cached spline tables; agrees
    with :func:`latent_scores` to about 1e-8.
    """
    w = np.empty(np.shape(x))
    for j, lam in enumerate(structure.marg_lam):
        w[..., j] = _table(round(float(lam), 12))(x[..., j])
    return w


def _clamp(u):
    bad = (u < U_CLAMP) | (u > 1.0 - U_CLAMP)
    if bad.any():
        clamp_counter.add(bad.sum())
        u = np.clip(u, U_CLAMP, 1.0 - U_CLAMP)
    return u


def latent_scores(y, xb, b, structure: LatentStructure, marginal: MarginalSpec):
    """Vectorized probability-integral transform.

    ``y`` and ``xb`` have trailing axis ``n``; ``b`` broadcasts against the
    leading axes (``b[..., None]`` is added to the location).
    """
    b = np.asarray(b, dtype=float)[..., None]
    eta = xb + b
    u = _clamp(marginal.cdf(y, eta))
    w = sn_quantile_uv(u, 0.0, 1.0, np.broadcast_to(structure.marg_lam, u.shape))
    return b + w


def to_latent(y, unit: Unit, params: ModelParams, b: float) -> np.ndarray:
    """Latent skew-normal scores of one unit at random intercept ``b``."""
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise DomainError("responses must be strictly positive")
    if not np.isfinite(b):
        raise DomainError("random intercept must be finite")
    s = latent_structure(unit.times, params.xi, params.lambda_star)
    return latent_scores(y, unit.X @ params.beta, b, s, params.marginal)


def joint_logdensity(y, unit: Unit, params: ModelParams, b: float):
    """Log of the copula-coupled density of ``y`` given ``b``.

    ``y`` may stack several response vectors along leading axes.
    """
    y = np.asarray(y, dtype=float)
    s = latent_structure(unit.times, params.xi, params.lambda_star)
    xb = unit.X @ params.beta
    z = latent_scores(y, xb, b, s, params.marginal)
    mv = SkewNormalMV(np.full(s.n, b), s.sigma, s.lam)
    out = sn_logpdf_mv(z, mv)
    out = out + np.sum(params.marginal.logpdf(y, xb + b), axis=-1)
    out = out - np.sum(sn_logpdf_uv(z, b, 1.0, s.marg_lam), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def joint_density(y, unit: Unit, params: ModelParams, b: float):
    return np.exp(joint_logdensity(y, unit, params, b))


def joint_cdf(y, unit: Unit, params: ModelParams, b: float, mc_draws: int, rng) -> tuple[float, float]:
    """Monte Carlo estimate of ``P(Y <= y | b)`` and its standard error."""
    if mc_draws < 1000:
        raise DomainError("mc_draws must be at least 1000")
    y = np.asarray(y, dtype=float)
    s = latent_structure(unit.times, params.xi, params.lambda_star)
    z = latent_scores(y, unit.X @ params.beta, b, s, params.marginal)
    draws = sn_sample_mv(SkewNormalMV(np.full(s.n, b), s.sigma, s.lam), rng, mc_draws)
    hit = np.all(draws <= z, axis=1)
    p = hit.mean()
    return float(p), float(np.sqrt(p * (1.0 - p) / mc_draws))


def sample_latent_z(structure: LatentStructure, b, rng, size=None):
    """Draw latent scores ``Z | b`` for one or many units sharing ``structure``."""
    b = np.atleast_1d(np.asarray(b, dtype=float))
    shape = b.shape if size is None else (size,)
    v = np.abs(rng.standard_normal(shape))
    inner = sym_sqrt(np.eye(structure.n) - np.outer(structure.delta_star, structure.delta_star))
    X = rng.standard_normal(shape + (structure.n,))
    return b[..., None] + v[..., None] * structure.shift + X @ (structure.root @ inner).T


def responses_from_latent(z, xb, b, structure: LatentStructure, marginal: MarginalSpec):
    """Map latent scores back to responses (inverse of :func:`latent_scores`)."""
    b = np.asarray(b, dtype=float)[..., None]
    u = sn_cdf_uv(z, b, 1.0, structure.marg_lam)
    u = _clamp(u)
    return marginal.ppf(u, xb + b)


def sample_response(unit: Unit, params: ModelParams, b: float, rng) -> np.ndarray:
    """Simulate one response vector for ``unit`` given its random intercept."""
    s = latent_structure(unit.times, params.xi, params.lambda_star)
    z = sample_latent_z(s, b, rng)[0]
    y = responses_from_latent(z, unit.X @ params.beta, b, s, params.marginal)
    if np.any(~(y > 0)):
        warnings.warn("non-positive simulated response; clamping", RuntimeWarning)
        y = np.maximum(y, np.finfo(float).tiny)
    return y
