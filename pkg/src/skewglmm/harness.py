"""Monte Carlo replication tables, fit reports and density grids."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .correlation import build_ar_corr
from .data import LongitudinalDataset, ModelParams
from .marginals import MarginalSpec
from .mcem import FitResult, McemConfig, e_step_q, fit, fisher_se
from .simgen import DesignSpec, generate
from .skewnormal import DomainError

COPULAS = ("skewnormal", "normal")


@dataclass(frozen=True)
class TableSpec:
    design: str
    marginal: MarginalSpec
    # (row label, truth) in display order; labels starting with "beta" get coverage
    rows: tuple

    def truth(self) -> dict:
        return dict(self.rows)


TABLES = {
    1: TableSpec(
        "univariate",
        MarginalSpec("exponential"),
        (("E[alpha+b]", 3.0), ("Var[alpha+b]", 2.0), ("xi", 0.2), ("lambda_bar", 1.0)),
    ),
    2: TableSpec(
        "bivariate",
        MarginalSpec("exponential"),
        (("beta1", 2.0), ("beta2", 1.0), ("E[alpha+b]", 1.0), ("Var[alpha+b]", 4.0), ("xi", 0.2), ("lambda_bar", 1.0)),
    ),
    3: TableSpec(
        "bivariate",
        MarginalSpec("gamma", 3.0),
        (("beta1", 2.0), ("beta2", 1.0), ("E[alpha+b]", 1.0), ("Var[alpha+b]", 4.0), ("xi", 0.2), ("lambda_bar", 1.0)),
    ),
}


def derived_seed(seed: int, *key: int) -> int:
    """Independent 32-bit seed for the stream labelled by ``key``."""
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def config_for(copula: str, config: McemConfig | None) -> McemConfig:
    if copula not in COPULAS:
        raise DomainError(f"unknown copula {copula!r}")
    config = McemConfig() if config is None else config
    if copula == "normal":
        return McemConfig(**{**config.__dict__, "freeze_lambda": 0.0})
    return config


@dataclass
class ReplicateRecord:
    index: int
    copula: str
    estimates: dict
    se: dict
    converged: bool
    iterations: int
    warnings: list = field(default_factory=list)
    loglik_trace: np.ndarray | None = None
    q_trace: np.ndarray | None = None
    q_se: np.ndarray | None = None


def _estimates(result: FitResult, table: int) -> tuple[dict, dict]:
    est = {
        "E[alpha+b]": result.e_alpha_plus_b,
        "Var[alpha+b]": result.var_alpha_plus_b,
        "xi": float(result.params.xi),
        "lambda_bar": result.lambda_bar,
    }
    se = {}
    if table != 1:
        beta = result.params.beta
        sb = result.se["beta"]
        est["beta1"], est["beta2"] = float(beta[1]), float(beta[2])
        se["beta1"], se["beta2"] = float(sb[1]), float(sb[2])
    return est, se


def run_replicate(table: int, index: int, seed: int, copula: str = "skewnormal", config: McemConfig | None = None):
    """Simulate replicate ``index`` of ``table`` and fit it; the dataset depends only on ``(seed, index)``."""
    spec = TABLES[table]
    ds, _ = generate(DesignSpec(spec.design, marginal=spec.marginal, seed=derived_seed(seed, index, 0)))
    res = fit(ds, None, config_for(copula, config), rng=derived_seed(seed, index, 1), marginal=spec.marginal)
    est, se = _estimates(res, table)
    return ReplicateRecord(
        index, copula, est, se, res.converged, res.iterations, list(res.warnings),
        res.loglik_trace, res.q_trace, res.q_se,
    )  # fmt: skip


def _job(args):
    return run_replicate(*args)


def replicate_table(table: int, replicates: int, seed: int, copulas=("skewnormal",), config=None, workers: int = 1):
    """All replicates of ``table`` for each copula arm, ordered by (arm, index)."""
    if table not in TABLES:
        raise DomainError(f"unknown table {table}")
    if replicates < 1:
        raise DomainError("need at least one replicate")
    jobs = [(table, r, seed, c, config) for c in copulas for r in range(replicates)]
    if workers <= 1:
        return [_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_job, jobs))


def summarize(records: list[ReplicateRecord], table: int) -> list[dict]:
    """Per-parameter MC mean, MC SD, MSE and (for regression coefficients) coverage of the 95% Wald interval."""
    out = []
    z = float(special.ndtri(0.975))
    for copula in dict.fromkeys(r.copula for r in records):
        recs = [r for r in records if r.copula == copula]
        for name, truth in TABLES[table].rows:
            vals = np.array([r.estimates[name] for r in recs])
            sd = float(vals.std(ddof=1)) if vals.size > 1 else None
            ec = None
            if name.startswith("beta"):
                ses = np.array([r.se[name] for r in recs])
                ec = float(np.mean(np.abs(vals - truth) <= z * ses))
            out.append(
                {
                    "copula": copula,
                    "parameter": name,
                    "truth": truth,
                    "mc_mean": float(vals.mean()),
                    "mc_sd": sd,
                    "mse": float(np.mean((vals - truth) ** 2)),
                    "ec": ec,
                    "converged": int(sum(r.converged for r in recs)),
                    "replicates": len(recs),
                }
            )
    return out


# ---------------------------------------------------------------------------
# fit reports
# ---------------------------------------------------------------------------


def reference_times(dataset: LongitudinalDataset) -> np.ndarray:
    """Observation times shared by the most units."""
    return max(dataset.time_groups(), key=lambda g: g[1].size)[0]


def fit_report(result: FitResult, dataset: LongitudinalDataset, extra: dict | None = None) -> dict:
    """JSON-ready summary; AIC and BIC use the standard definitions."""
    p = result.params
    k = result.n_params
    nll = -result.loglik
    times = reference_times(dataset)
    report = {
        "beta": p.beta.tolist(),
        "se_beta": fisher_se(dataset, p).tolist(),
        "covariates": list(dataset.covariate_names),
        "e_alpha_plus_b": result.e_alpha_plus_b,
        "var_alpha_plus_b": result.var_alpha_plus_b,
        "xi": float(p.xi),
        "lambda_bar": result.lambda_bar,
        "neg_loglik": nll,
        "n_params": k,
        "n_obs": dataset.n_obs,
        "aic": 2 * k + 2 * nll,
        "bic": k * math.log(dataset.n_obs) + 2 * nll,
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "corr_times": times.tolist(),
        "corr_matrix": build_ar_corr(p.xi, times).tolist(),
        "params": p.to_dict(),
        "lambda_frozen": "lambda_star" not in result.se,
        "warnings": list(result.warnings),
        "loglik_trace": result.loglik_trace.tolist(),
    }
    if extra:
        report.update(extra)
    return report


def format_table(report: dict) -> str:
    names = report.get("covariates") or [f"beta{j}" for j in range(len(report["beta"]))]
    lines = [f"{'parameter':<16}{'estimate':>12}{'se':>12}"]
    for n, b, s in zip(names, report["beta"], report["se_beta"]):
        lines.append(f"{n:<16}{b:>12.4f}{s:>12.4f}")
    for key in ("e_alpha_plus_b", "var_alpha_plus_b", "xi", "lambda_bar"):
        lines.append(f"{key:<16}{report[key]:>12.4f}{'':>12}")
    lines.append(f"-loglik {report['neg_loglik']:.3f}  AIC {report['aic']:.3f}  BIC {report['bic']:.3f}")
    status = "converged" if report["converged"] else "NOT converged"
    lines.append(f"{status} after {report['iterations']} iterations")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# density grids
# ---------------------------------------------------------------------------


def parse_grid(spec: str) -> np.ndarray:
    """``"lo:hi:steps"`` to an evenly spaced grid with ``steps`` points."""
    try:
        lo, hi, steps = spec.split(":")
        lo, hi, steps = float(lo), float(hi), int(steps)
    except ValueError:
        raise DomainError(f"grid {spec!r} is not lo:hi:steps") from None
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo and steps >= 2):
        raise DomainError(f"grid {spec!r} needs finite lo < hi and steps >= 2")
    return np.linspace(lo, hi, steps)


def _mixture_logy_density(u, eta, marginal: MarginalSpec, chunk: int = 32) -> np.ndarray:
    """Average over ``eta`` of the density of ``log Y`` at each point of ``u``."""
    eta = np.ravel(eta)
    out = np.empty(u.size)
    for s in range(0, u.size, chunk):
        uu = u[s : s + chunk, None]
        out[s : s + chunk] = np.exp(marginal.logpdf(np.exp(uu), eta[None, :]) + uu).mean(axis=1)
    return out


def _row_etas(dataset: LongitudinalDataset, beta) -> tuple[np.ndarray, np.ndarray]:
    X, _, unit = dataset.stacked()
    return X @ beta, unit


def true_logy_density(u, dataset: LongitudinalDataset, params: ModelParams, nodes: int = 60) -> np.ndarray:
    """Population density of ``log Y`` pooled over the design rows, with ``b`` integrated out."""
    x, w = special.roots_hermitenorm(nodes)
    w = w / w.sum()
    xb, _ = _row_etas(dataset, params.beta)
    eta = xb[:, None] + math.sqrt(params.omega_b) * x[None, :]
    dens = np.zeros(u.size)
    for k in range(nodes):
        dens += w[k] * _mixture_logy_density(u, eta[:, k], params.marginal)
    return dens


def fitted_logy_density(u, dataset: LongitudinalDataset, params: ModelParams, b_draws: np.ndarray) -> np.ndarray:
    """Density of ``log Y`` averaged over design rows and posterior draws ``b_draws`` of shape ``(R, m)``."""
    xb, unit = _row_etas(dataset, params.beta)
    eta = xb[None, :] + b_draws[:, unit]
    return _mixture_logy_density(u, eta, params.marginal)


def posterior_b_draws(dataset: LongitudinalDataset, params: ModelParams, draws: int = 200, seed: int = 0) -> np.ndarray:
    bank, _, _ = e_step_q(dataset, params, McemConfig(), seed, n_draws=draws, form="collapsed")
    return bank.b


def trapezoid(y, x) -> float:
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))
