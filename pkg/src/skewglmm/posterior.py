"""Conditional laws of the random effects and the half-normal latent.

With ``a = Sigma^{1/2} delta*`` and ``Psi = Sigma^{1/2} (I - delta* delta*') Sigma^{1/2}``
the latent scores satisfy

    z | b, v ~ N(D b + a v, Psi),   b ~ N(0, Omega_b),   v ~ HN(0, 1).

Everything here is written for a general random-effects design ``D`` (n x q);
the fitting code only uses a random intercept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .copula import LatentStructure, latent_structure
from .data import ModelParams, Unit
from .skewnormal import (
    HALF_LOG_2PI,
    DomainError,
    SkewNormalMV,
    sn_logpdf_mv,
    sn_logpdf_uv,
    sym_sqrt,
)


def psi_matrix(sigma, delta_star, root=None) -> np.ndarray:
    """``Sigma^{1/2} (I - d d') Sigma^{1/2}``."""
    d = np.atleast_1d(np.asarray(delta_star, dtype=float))
    dd = d @ d
    if dd >= 1.0 - 1e-10:
        raise DomainError(f"delta*'delta* = {dd:.6g} too close to 1; Psi is near singular")
    S = sym_sqrt(sigma) if root is None else root
    psi = S @ (np.eye(d.size) - np.outer(d, d)) @ S
    return 0.5 * (psi + psi.T)


def _omega(omega) -> np.ndarray:
    om = np.atleast_2d(np.asarray(omega, dtype=float))
    if np.linalg.eigvalsh(om).min() <= 0:
        raise DomainError("Omega_b must be positive definite")
    return om


# ---------------------------------------------------------------------------
# b | z, v  (Gaussian)  and  b | z  (skew-normal)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PosteriorBGivenZV:
    mean: np.ndarray
    cov: np.ndarray

    def logpdf(self, b):
        b = np.asarray(b, dtype=float)
        if self.mean.size == 1:
            b = b[..., None] if b.ndim == 0 or b.shape[-1] != 1 else b
        r = b - self.mean
        sol = np.linalg.solve(self.cov, r[..., None])[..., 0]
        _, logdet = np.linalg.slogdet(self.cov)
        return -self.mean.size * HALF_LOG_2PI - 0.5 * logdet - 0.5 * np.sum(r * sol, axis=-1)


@dataclass(frozen=True)
class PosteriorBGivenZ:
    loc: np.ndarray
    disp: np.ndarray
    skew: np.ndarray

    def logpdf(self, b):
        if self.loc.size == 1:
            return sn_logpdf_uv(b, self.loc[0], self.disp[0, 0], self.skew[0])
        return sn_logpdf_mv(b, SkewNormalMV(self.loc, self.disp, self.skew))


def b_given_zv(z, v, D, omega, s: LatentStructure) -> PosteriorBGivenZV:
    D = np.atleast_2d(np.asarray(D, dtype=float))
    om = _omega(omega)
    PiD = s.psi_inv @ D
    tau2 = np.linalg.inv(np.linalg.inv(om) + D.T @ PiD)
    tau2 = 0.5 * (tau2 + tau2.T)
    mean = tau2 @ PiD.T @ (np.asarray(z, dtype=float) - s.shift * v)
    return PosteriorBGivenZV(mean, tau2)


def b_given_z(z, D, omega, s: LatentStructure) -> PosteriorBGivenZ:
    D = np.atleast_2d(np.asarray(D, dtype=float))
    post = b_given_zv(z, 0.0, D, omega, s)
    tau2 = post.cov
    g = D.T @ s.psi_inv @ s.shift  # D' Psi^-1 Sigma^{1/2} delta*
    d = tau2 @ g
    q = d.size
    scale = sym_sqrt(tau2 + (d @ d) * np.eye(q))
    denom = np.sqrt(1.0 + d @ np.linalg.solve(tau2, d))
    skew = -(scale @ g) / denom
    return PosteriorBGivenZ(post.mean, tau2 + np.outer(d, d), skew)


def posterior_b_given_zv(z, v, unit: Unit, params: ModelParams) -> PosteriorBGivenZV:
    s = latent_structure(unit.times, params.xi, params.lambda_star)
    return b_given_zv(z, v, unit.D, params.omega_b, s)


def posterior_b_given_z(z, unit: Unit, params: ModelParams) -> PosteriorBGivenZ:
    s = latent_structure(unit.times, params.xi, params.lambda_star)
    return b_given_z(z, unit.D, params.omega_b, s)


@dataclass(frozen=True)
class ExtendedSkewNormal:
    """Density ``phi(b | m, V) Phi(c0 - c1 b) / Phi((c0 - c1 m) / sqrt(1 + c1^2 V))``."""

    m: float
    V: float
    c0: float
    c1: float

    def logpdf(self, b):
        b = np.asarray(b, dtype=float)
        r = b - self.m
        tau = (self.c0 - self.c1 * self.m) / np.sqrt(1.0 + self.c1**2 * self.V)
        return (
            -HALF_LOG_2PI
            - 0.5 * np.log(self.V)
            - 0.5 * r * r / self.V
            + special.log_ndtr(self.c0 - self.c1 * b)
            - special.log_ndtr(tau)
        )


def exact_b_given_z(z, unit: Unit, params: ModelParams) -> ExtendedSkewNormal:
    """Exact random-intercept posterior with the half-normal latent integrated out.

    Integrating ``v`` gives ``z | b ~ SN_n(b 1, Sigma, lam)``, so the posterior is
    an extended skew-normal. This is the stationary ``b``-marginal of
    :func:`sample_latents`.
    """
    from .skewnormal import sym_inv_sqrt

    s = latent_structure(unit.times, params.xi, params.lambda_star)
    z = np.asarray(z, dtype=float)
    one = np.ones(s.n)
    Si1 = np.linalg.solve(s.sigma, one)
    V = 1.0 / (1.0 / params.omega_b + one @ Si1)
    m = V * (Si1 @ z)
    w = sym_inv_sqrt(s.sigma) @ s.lam
    return ExtendedSkewNormal(float(m), float(V), float(w @ z), float(w @ one))


# ---------------------------------------------------------------------------
# v | z, b  and  z | v
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TruncatedNormal:
    """Normal law truncated to ``[lower, inf)``."""

    loc: float
    scale: float
    lower: float = 0.0

    def logpdf(self, v):
        v = np.asarray(v, dtype=float)
        r = (v - self.loc) / self.scale
        alpha = (self.lower - self.loc) / self.scale
        out = -HALF_LOG_2PI - np.log(self.scale) - 0.5 * r * r - special.log_ndtr(-alpha)
        return np.where(v >= self.lower, out, -np.inf)

    def mean(self) -> float:
        alpha = (self.lower - self.loc) / self.scale
        hazard = np.exp(-0.5 * alpha**2 - HALF_LOG_2PI - special.log_ndtr(-alpha))
        return float(self.loc + self.scale * hazard)


def v_given_zb(z, b, D, s: LatentStructure) -> TruncatedNormal:
    r = np.asarray(z, dtype=float) - np.atleast_2d(D) @ np.atleast_1d(b)
    Pa = s.psi_inv @ s.shift
    prec = 1.0 + s.shift @ Pa
    return TruncatedNormal(float(Pa @ r / prec), float(1.0 / np.sqrt(prec)))


def posterior_v_given_zb(z, b, unit: Unit, params: ModelParams) -> TruncatedNormal:
    s = latent_structure(unit.times, params.xi, params.lambda_star)
    return v_given_zb(z, b, unit.D, s)


def marginal_z_given_v(z, v, unit: Unit, params: ModelParams) -> float:
    """Normal density of ``z`` given ``v`` with ``b`` integrated out."""
    s = latent_structure(unit.times, params.xi, params.lambda_star)
    D = unit.D
    cov = s.psi + D @ _omega(params.omega_b) @ D.T
    r = np.asarray(z, dtype=float) - s.shift * v
    _, logdet = np.linalg.slogdet(cov)
    quad = r @ np.linalg.solve(cov, r)
    return float(np.exp(-s.n * HALF_LOG_2PI - 0.5 * logdet - 0.5 * quad))


# ---------------------------------------------------------------------------
# Gibbs sampling
# ---------------------------------------------------------------------------


def truncnorm_from_uniform(loc, scale, u):
    """Inverse-CDF draw from ``N(loc, scale^2)`` truncated to ``[0, inf)``."""
    alpha = -loc / scale
    x = -special.ndtri_exp(np.log(u) + special.log_ndtr(-alpha))
    return np.maximum(loc + scale * x, 0.0)


def gibbs_intercept(cz, ez, tau2, c_a, prec_v, normals, uniforms, v0=None):
    """Vectorized random-intercept Gibbs chains.

    The chains for many units share the latent structure and only need the
    scalar projections ``cz = 1'Psi^-1 z`` and ``ez = a'Psi^-1 z``:

        b | z, v ~ N(tau2 (cz - c_a v), tau2)
        v | z, b ~ N((ez - c_a b) / prec_v, 1 / prec_v) truncated at 0

    ``normals`` and ``uniforms`` have shape ``(steps, units)``; every step is
    kept (the caller discards burn-in).
    """
    steps, m = normals.shape
    sd_b, sd_v = np.sqrt(tau2), 1.0 / np.sqrt(prec_v)
    v = np.full(m, np.sqrt(2.0 / np.pi)) if v0 is None else np.array(v0, dtype=float)
    bs = np.empty((steps, m))
    vs = np.empty((steps, m))
    for t in range(steps):
        b = tau2 * (cz - c_a * v) + sd_b * normals[t]
        v = truncnorm_from_uniform((ez - c_a * b) / prec_v, sd_v, uniforms[t])
        bs[t] = b
        vs[t] = v
    return bs, vs


def sample_latents(z, unit: Unit, params: ModelParams, rng, n_draws: int, burn_in: int = 500):
    """Gibbs chain for ``(b, v) | z`` with a random intercept.

    Returns ``(b_draws, v_draws)``, each of length ``n_draws``.
    """
    if n_draws < 1:
        raise DomainError("n_draws must be >= 1")
    s = latent_structure(unit.times, params.xi, params.lambda_star)
    one = np.ones(s.n)
    Pi1 = s.psi_inv @ one
    Pa = s.psi_inv @ s.shift
    tau2 = 1.0 / (1.0 / params.omega_b + one @ Pi1)
    steps = burn_in + n_draws
    normals = rng.standard_normal((steps, 1))
    uniforms = rng.random((steps, 1))
    z = np.asarray(z, dtype=float)
    bs, vs = gibbs_intercept(
        np.array([Pi1 @ z]), np.array([Pa @ z]), tau2, one @ Pa, 1.0 + s.shift @ Pa, normals, uniforms
    )
    return bs[burn_in:, 0], vs[burn_in:, 0]
