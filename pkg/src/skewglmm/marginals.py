"""Response families under a log link.

Both families are parametrized by the linear predictor ``eta`` so that the
mean equals ``exp(eta)``. The gamma family uses shape ``k`` and scale
``exp(eta) / k``; ``k = 1`` recovers the exponential family.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .skewnormal import DomainError

FAMILIES = ("exponential", "gamma")


@dataclass(frozen=True)
class MarginalSpec:
    family: str = "exponential"
    shape: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if self.family == "exponential" and self.shape != 1.0:
            object.__setattr__(self, "shape", 1.0)
        if not self.shape > 0:
            raise DomainError("gamma shape must be positive")

    @property
    def k(self) -> float:
        return float(self.shape)

    def logpdf(self, y, eta):
        y = _check_positive(y)
        k = self.k
        # log of y^(k-1) exp(-k y / mu) (k / mu)^k / Gamma(k)
        return (k - 1.0) * np.log(y) - k * y * np.exp(-eta) + k * (np.log(k) - eta) - special.gammaln(k)

    def pdf(self, y, eta):
        return np.exp(self.logpdf(y, eta))

    def cdf(self, y, eta):
        y = _check_positive(y)
        x = self.k * y * np.exp(-np.asarray(eta, dtype=float))
        if self.family == "exponential":
            return -np.expm1(-x)
        return special.gammainc(self.k, x)

    def sf(self, y, eta):
        y = _check_positive(y)
        x = self.k * y * np.exp(-np.asarray(eta, dtype=float))
        if self.family == "exponential":
            return np.exp(-x)
        return special.gammaincc(self.k, x)

    def logcdf(self, y, eta):
        with np.errstate(divide="ignore"):
            return np.log(self.cdf(y, eta))

    def logsf(self, y, eta):
        if self.family == "exponential":
            y = _check_positive(y)
            return -y * np.exp(-np.asarray(eta, dtype=float))
        with np.errstate(divide="ignore"):
            return np.log(self.sf(y, eta))

    def probit(self, y, eta):
        """``Phi^{-1}(F(y | eta))`` without rounding ``F`` to 0 or 1 in either tail."""
        x = self.k * _check_positive(y) * np.exp(-np.asarray(eta, dtype=float))
        out = np.empty(x.shape)
        if self.family == "exponential":
            lower = x < np.log(2.0)
            out[lower] = special.ndtri_exp(np.log(-np.expm1(-x[lower])))
            out[~lower] = -special.ndtri_exp(-x[~lower])
            return out
        F = special.gammainc(self.k, x)
        lower = F < 0.5
        with np.errstate(divide="ignore"):
            out[lower] = special.ndtri_exp(_log_gammainc(self.k, x[lower]))
            out[~lower] = -special.ndtri_exp(_log_gammaincc(self.k, x[~lower]))
        return out

    def ppf(self, u, eta):
        u = np.asarray(u, dtype=float)
        if np.any(~(u > 0.0) | ~(u < 1.0)):
            raise DomainError("quantile level must lie in (0, 1)")
        scale = np.exp(np.asarray(eta, dtype=float)) / self.k
        if self.family == "exponential":
            return -scale * np.log1p(-u)
        x = special.gammaincinv(self.k, u)
        # one Newton polish on the regularized incomplete gamma
        logdens = (self.k - 1.0) * np.log(x) - x - special.gammaln(self.k)
        x = x - (special.gammainc(self.k, x) - u) / np.exp(logdens)
        return scale * x

    def mean(self, eta):
        return np.exp(eta)

    def score_eta(self, y, eta):
        """Derivative of the log density with respect to ``eta``."""
        return self.k * (np.asarray(y) * np.exp(-np.asarray(eta)) - 1.0)

    def to_dict(self) -> dict:
        return {"family": self.family, "shape": self.k}


def _log_gammainc(k, x):
    """``log P(k, x)``, by the power series where ``P`` underflows."""
    with np.errstate(divide="ignore"):
        out = np.log(special.gammainc(k, x))
    tiny = ~np.isfinite(out)
    if np.any(tiny):
        xt = x[tiny]
        term, total = np.ones_like(xt), np.ones_like(xt)
        for n in range(1, 40):
            term = term * xt / (k + n)
            total = total + term
        out[tiny] = k * np.log(xt) - xt - special.gammaln(k + 1.0) + np.log(total)
    return out


def _log_gammaincc(k, x):
    """``log Q(k, x)``, by the asymptotic series where ``Q`` underflows."""
    with np.errstate(divide="ignore"):
        out = np.log(special.gammaincc(k, x))
    tiny = ~np.isfinite(out)
    if np.any(tiny):
        xt = x[tiny]
        term, total = np.ones_like(xt), np.ones_like(xt)
        for n in range(1, 12):
            term = term * (k - n) / xt
            total = total + term
        out[tiny] = (k - 1.0) * np.log(xt) - xt - special.gammaln(k) + np.log(total)
    return out


def _check_positive(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise DomainError("responses must be strictly positive")
    return y


def marginal_pdf(y, eta, spec: MarginalSpec):
    return spec.pdf(y, eta)


def marginal_cdf(y, eta, spec: MarginalSpec):
    return spec.cdf(y, eta)


def marginal_quantile(u, eta, spec: MarginalSpec):
    return spec.ppf(u, eta)
