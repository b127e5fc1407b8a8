"""Brute-force reference computations shared by the unit and acceptance tests.

Each oracle evaluates a conditional law from its definition (prior times
likelihood on a grid, or a mixture integral by adaptive quadrature) without
using any closed form from the package.
"""

import numpy as np
from scipy import integrate, stats

from skewglmm.data import ModelParams, Unit
from skewglmm.marginals import MarginalSpec

# (n, lambda*, xi): the five-point design for the posterior checks
POSTERIOR_CONFIGS = [(2, 0.0, 0.2), (2, 1.0, 1.0), (3, 3.0, 0.2), (3, 1.0, 0.2), (2, 3.0, 1.0)]
OMEGA = 1.5


def corr(times, xi):
    t = np.asarray(times, dtype=float)
    return np.exp(-xi * np.abs(t[:, None] - t[None, :]))


def latent_pieces(times, xi, lam):
    """``(Sigma, a, Psi)`` from first principles for a common skewness ``lam``."""
    S = corr(times, xi)
    w, V = np.linalg.eigh(S)
    root = (V * np.sqrt(w)) @ V.T
    n = len(times)
    lam_vec = np.full(n, lam)
    d = lam_vec / np.sqrt(1.0 + lam_vec @ lam_vec)
    a = root @ d
    psi = root @ (np.eye(n) - np.outer(d, d)) @ root
    return S, a, 0.5 * (psi + psi.T)


def config_case(n, lam, xi, seed=0):
    times = np.arange(1.0, n + 1.0)
    unit = Unit("u", times, np.ones(n), np.ones((n, 1)))
    params = ModelParams(np.zeros(1), OMEGA, xi, lam, MarginalSpec())
    z = np.random.default_rng(seed).normal(0.3, 1.0, size=n)
    return unit, params, z


def _normalize(x, logf):
    f = np.exp(logf - logf.max())
    return f / integrate.trapezoid(f, x)


def grid_b_given_zv(z, v, times, xi, lam, omega, grid):
    _, a, psi = latent_pieces(times, xi, lam)
    one = np.ones(len(times))
    mvn = stats.multivariate_normal(np.zeros(len(times)), psi)
    logf = mvn.logpdf(z - grid[:, None] * one - a * v) + stats.norm.logpdf(grid, 0, np.sqrt(omega))
    return _normalize(grid, logf)


def hn_mixture_b_given_z(z, times, xi, lam, omega, grid):
    """``int_0^inf p(b | z, v) 2 phi(v) dv`` with ``p(b | z, v)`` from the Gaussian grid posterior."""
    _, a, psi = latent_pieces(times, xi, lam)
    one = np.ones(len(times))
    Pi = np.linalg.inv(psi)
    tau2 = 1.0 / (1.0 / omega + one @ Pi @ one)

    def dens(v):
        mean = tau2 * (one @ Pi @ (z - a * v))
        return stats.norm.pdf(grid, mean, np.sqrt(tau2)) * 2.0 * stats.norm.pdf(v)

    return integrate.quad_vec(dens, 0.0, np.inf, epsabs=1e-13, epsrel=1e-12)[0]


def grid_exact_b_given_z(z, times, xi, lam, omega, grid):
    """Posterior of ``b`` with ``v`` integrated out of the likelihood, on a grid."""
    _, a, psi = latent_pieces(times, xi, lam)
    one = np.ones(len(times))
    mvn = stats.multivariate_normal(np.zeros(len(times)), psi)

    def joint(v):
        return np.exp(mvn.logpdf(z - grid[:, None] * one - a * v)) * 2.0 * stats.norm.pdf(v)

    lik = integrate.quad_vec(joint, 0.0, np.inf, epsabs=1e-300, epsrel=1e-12)[0]
    logf = np.log(lik) + stats.norm.logpdf(grid, 0, np.sqrt(omega))
    return _normalize(grid, logf)


def grid_v_given_zb(z, b, times, xi, lam, grid):
    """``2 phi(v) phi_n(z | b 1 + a v, Psi)`` on a grid, normalized by adaptive quadrature."""
    _, a, psi = latent_pieces(times, xi, lam)
    r = z - b * np.ones(len(times))
    mvn = stats.multivariate_normal(np.zeros(len(times)), psi)
    f = lambda v: np.exp(mvn.logpdf(r - np.multiply.outer(v, a))) * 2.0 * stats.norm.pdf(v)
    total = integrate.quad(f, 0.0, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
    return f(grid) / total


def integrated_z_given_v(z, v, times, xi, lam, omega):
    _, a, psi = latent_pieces(times, xi, lam)
    one = np.ones(len(times))
    mvn = stats.multivariate_normal(np.zeros(len(times)), psi)
    f = lambda b: np.exp(mvn.logpdf(z - b * one - a * v)) * stats.norm.pdf(b, 0, np.sqrt(omega))
    return integrate.quad(f, -np.inf, np.inf, epsabs=0, epsrel=1e-13, limit=200)[0]
