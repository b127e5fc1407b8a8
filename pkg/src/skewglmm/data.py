"""Containers for longitudinal data and model parameters."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .marginals import MarginalSpec
from .skewnormal import DomainError


@dataclass
class Unit:
    """One sampling unit: observation times, responses and fixed-effect rows."""

    unit_id: str
    times: np.ndarray
    y: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        n = self.times.size
        if self.y.shape != (n,) or self.X.shape[0] != n:
            raise DomainError(f"unit {self.unit_id}: inconsistent lengths")

    @property
    def n(self) -> int:
        return self.times.size

    @property
    def D(self) -> np.ndarray:
        # random intercept design
        return np.ones((self.n, 1))


@dataclass
class LongitudinalDataset:
    units: list[Unit]
    covariate_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.units:
            raise DomainError("dataset has no units")
        p = {u.X.shape[1] for u in self.units}
        if len(p) != 1:
            raise DomainError("units disagree on the number of covariates")

    @property
    def m(self) -> int:
        return len(self.units)

    @property
    def p(self) -> int:
        return self.units[0].X.shape[1]

    @property
    def n_obs(self) -> int:
        return sum(u.n for u in self.units)

    @property
    def balanced(self) -> bool:
        t0 = self.units[0].times
        return all(u.n == t0.size and np.array_equal(u.times, t0) for u in self.units)

    def time_groups(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Units grouped by identical observation-time vectors.

        Returns a list of ``(times, unit_indices)``.
        """
        groups: dict[tuple, list[int]] = {}
        for i, u in enumerate(self.units):
            groups.setdefault(tuple(u.times.tolist()), []).append(i)
        return [(np.array(k), np.array(v)) for k, v in groups.items()]

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(X, y, unit_index)`` in long format."""
        X = np.vstack([u.X for u in self.units])
        y = np.concatenate([u.y for u in self.units])
        idx = np.concatenate([np.full(u.n, i) for i, u in enumerate(self.units)])
        return X, y, idx


@dataclass(frozen=True)
class ModelParams:
    """Full estimable parameter vector.

    ``lambda_star`` is the common component of the latent skewness vector
    ``(lambda_star, ..., lambda_star)``; ``omega_b`` is the random-intercept variance.
    """

    beta: np.ndarray
    omega_b: float
    xi: float
    lambda_star: float
    marginal: MarginalSpec = MarginalSpec()

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if not self.omega_b > 0:
            raise DomainError("omega_b must be positive")
        if not self.xi > 0:
            raise DomainError("xi must be positive")
        if not np.isfinite(self.lambda_star):
            raise DomainError("lambda_star must be finite")

    def replace(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.beta, [self.omega_b, self.xi, self.lambda_star]])

    def to_dict(self) -> dict:
        return {
            "beta": self.beta.tolist(),
            "omega_b": float(self.omega_b),
            "xi": float(self.xi),
            "lambda_star": float(self.lambda_star),
            "marginal": self.marginal.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        m = d.get("marginal", {})
        return cls(
            beta=np.asarray(d["beta"], dtype=float),
            omega_b=float(d["omega_b"]),
            xi=float(d["xi"]),
            lambda_star=float(d["lambda_star"]),
            marginal=MarginalSpec(m.get("family", "exponential"), float(m.get("shape", 1.0))),
        )
