"""Monte Carlo EM for the random-intercept skew-normal copula model.

The latent data of unit ``i`` are its random intercept ``b_i`` and the
half-normal mixing variable ``v_i``. Given ``b_i`` the latent residuals
``w_i = z_i - b_i`` are a deterministic function of the responses, so the
E-step samples ``(b_i, v_i) | y_i`` in two stages:

* ``b | y`` (with ``v`` integrated out) by an independence Metropolis-Hastings
  chain whose Student-t proposal is fitted to a grid approximation of the
  posterior;
* ``v | b, y`` as an exact truncated-normal draw.

The chains of all units share one set of per-unit noise streams across EM
iterations (common random numbers), which keeps the parameter map smooth so
that the relative-change stopping rule can fire at the Monte Carlo noise floor.
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from .copula import PROBIT_CLIP, LatentStructure, latent_from_probit, latent_structure, probit_scores, to_latent
from .correlation import XI_MAX, default_xi_floor, estimate_xi_l2, second_moment_to_corr
from .data import LongitudinalDataset, ModelParams
from .posterior import truncnorm_from_uniform
from .skewnormal import HALF_LOG_2PI, DomainError, lambda_to_delta

LOG_2 = math.log(2.0)
FORMS = ("printed", "hierarchical", "collapsed")


class FitError(RuntimeError):
    """Raised when every restart of :func:`fit` diverged; carries their traces."""

    def __init__(self, message, traces):
        super().__init__(message)
        self.traces = traces


# ---------------------------------------------------------------------------
# configuration and containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McemConfig:
    r_init: int = 50
    r_growth: float = 1.2
    r_max: int = 1000
    burn_in: int = 500
    max_iter: int = 200
    rel_tol: float = 1e-3
    restarts: int = 3
    stable_iters: int = 3
    # chains restart from the previous iteration's state after this many steps
    warm_burn_in: int = 50
    # draws per unit used by the lambda and xi M-steps
    m_step_draws: int = 50
    lambda_bounds: tuple[float, float] = (-10.0, 10.0)
    xi_method: str = "likelihood"
    freeze_lambda: float | None = None
    # denominator floor of the relative-change rule, for parameters near 0
    rel_floor: float = 0.1
    quad_nodes: int = 30
    # "copula" maximizes the full bank-averaged log-likelihood over beta,
    # "marginal" stops at the root of the marginal score
    beta_method: str = "copula"

    def __post_init__(self):
        if self.r_init < 1 or self.r_max < self.r_init:
            raise DomainError("need 1 <= r_init <= r_max")
        if self.r_growth < 1:
            raise DomainError("r_growth must be >= 1")
        if not self.rel_tol > 0:
            raise DomainError("rel_tol must be positive")
        if self.restarts < 1 or self.max_iter < 1 or self.burn_in < 0:
            raise DomainError("restarts and max_iter must be >= 1, burn_in >= 0")
        if self.beta_method not in ("copula", "marginal"):
            raise DomainError(f"unknown beta_method {self.beta_method!r}")
        if self.xi_method not in ("likelihood", "l2"):
            raise DomainError(f"unknown xi_method {self.xi_method!r}")
        lo, hi = self.lambda_bounds
        if not lo < hi:
            raise DomainError("lambda_bounds must be increasing")

    def draws_at(self, iteration: int) -> int:
        return int(min(self.r_max, math.ceil(self.r_init * self.r_growth**iteration)))


@dataclass
class SampleBank:
    """Posterior draws of ``(b_i, v_i)``; arrays have shape ``(R, m)``."""

    b: np.ndarray
    v: np.ndarray
    acceptance: np.ndarray | None = None

    @property
    def R(self) -> int:
        return self.b.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]

    @property
    def b_mean(self) -> np.ndarray:
        return self.b.mean(axis=0)

    @property
    def b_sd(self) -> np.ndarray:
        return self.b.std(axis=0)

    def thin(self, k: int) -> "SampleBank":
        """Evenly spaced subset of at most ``k`` draws per unit."""
        if self.R <= k:
            return self
        idx = np.unique(np.linspace(0, self.R - 1, k).round().astype(int))
        return SampleBank(self.b[idx], self.v[idx], self.acceptance)


@dataclass(frozen=True)
class BoundedEstimate:
    value: float
    at_boundary: bool
    objective: float


@dataclass
class _Group:
    """Units sharing one vector of observation times."""

    idx: np.ndarray
    times: np.ndarray
    Y: np.ndarray  # (m_g, n)
    X: np.ndarray  # (m_g, n, p)

    def structure(self, params: ModelParams) -> LatentStructure:
        return latent_structure(self.times, params.xi, params.lambda_star)


def _groups(dataset: LongitudinalDataset) -> list[_Group]:
    out = []
    for times, idx in dataset.time_groups():
        Y = np.stack([dataset.units[i].y for i in idx])
        X = np.stack([dataset.units[i].X for i in idx])
        if np.any(~(Y > 0)):
            raise DomainError("responses must be strictly positive")
        out.append(_Group(idx, times, Y, X))
    return out


# ---------------------------------------------------------------------------
# complete-data log-likelihood
# ---------------------------------------------------------------------------


def _log_ndtr(x):
    """``log Phi(x)``; the plain form is twice as fast and accurate above -5."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(special.ndtr(x))
    tail = x < -5.0
    if tail.any():
        out[tail] = special.log_ndtr(x[tail])
    return out


def _log_sn1_sum(W, s: LatentStructure):
    """``sum_j log SN_1(w_j | 0, 1, lam*_j)`` over the trailing axis."""
    return np.sum(LOG_2 - HALF_LOG_2PI - 0.5 * W * W + _log_ndtr(W * s.marg_lam), axis=-1)


def _log_snn(W, s: LatentStructure):
    """``log SN_n(w | 0, Sigma, lam)`` over the trailing axis."""
    quad = np.einsum("...j,jk,...k->...", W, s.sigma_inv, W)
    return LOG_2 - s.n * HALF_LOG_2PI - 0.5 * s.sigma_logdet - 0.5 * quad + _log_ndtr(W @ s.alpha)


def _log_phi_psi(Rz, s: LatentStructure):
    quad = np.einsum("...j,jk,...k->...", Rz, s.psi_inv, Rz)
    return -s.n * HALF_LOG_2PI - 0.5 * s.psi_logdet - 0.5 * quad


def _unit_terms(W, b, v, logf, s: LatentStructure, omega: float, form: str):
    """Per-unit complete-data log-likelihood; ``W`` has trailing axis ``n``.

    ``printed`` is the four-part hierarchical expression exactly as usually
    written (up to constants, no prior terms); ``hierarchical`` is the
    log density of ``(y, b, v)``; ``collapsed`` is the log density of
    ``(y, b)`` with ``v`` integrated out.
    """
    if form == "printed":
        d = s.marg_delta
        one_m_d2 = 1.0 - d * d
        Rz = W - v[..., None] * s.shift
        quad = np.einsum("...j,jk,...k->...", Rz, s.psi_inv, Rz)
        uni = np.sum(np.log(one_m_d2) + (W - v[..., None] * d) ** 2 / one_m_d2, axis=-1)
        return -0.5 * s.psi_logdet - 0.5 * quad - 0.5 * uni + logf
    prior_b = -HALF_LOG_2PI - 0.5 * math.log(omega) - 0.5 * b * b / omega
    if form == "hierarchical":
        prior_v = LOG_2 - HALF_LOG_2PI - 0.5 * v * v
        return prior_b + prior_v + _log_phi_psi(W - v[..., None] * s.shift, s) - _log_sn1_sum(W, s) + logf
    if form == "collapsed":
        return prior_b + _log_snn(W, s) - _log_sn1_sum(W, s) + logf
    raise DomainError(f"unknown form {form!r}; expected one of {FORMS}")


def complete_loglik(dataset: LongitudinalDataset, params: ModelParams, latents, form: str = "printed") -> float:
    """Complete-data log-likelihood summed over units.

    ``latents`` is a pair ``(b, v)`` of length-``m`` arrays. The latent scores
    are recomputed from the responses with :func:`to_latent` at ``params``.
    """
    b, v = (np.asarray(a, dtype=float) for a in latents)
    if b.shape != (dataset.m,) or v.shape != (dataset.m,):
        raise DomainError("latents must hold one (b, v) pair per unit")
    total = 0.0
    for i, unit in enumerate(dataset.units):
        s = latent_structure(unit.times, params.xi, params.lambda_star)
        w = to_latent(unit.y, unit, params, b[i]) - b[i]
        logf = np.sum(params.marginal.logpdf(unit.y, unit.X @ params.beta + b[i]))
        term = float(_unit_terms(w, b[i], v[i], logf, s, params.omega_b, form))
        if not np.isfinite(term):
            raise DomainError(f"non-finite complete-data log-likelihood for unit index {i}")
        total += term
    return total


def _bank_terms(groups, params: ModelParams, bank: SampleBank, form: str, probits=None):
    """Per-draw, per-unit complete-data terms, shape ``(R, m)``."""
    out = np.empty(bank.b.shape)
    for g_i, g in enumerate(groups):
        s = g.structure(params)
        b, v = bank.b[:, g.idx], bank.v[:, g.idx]
        eta = (g.X @ params.beta)[None] + b[..., None]
        P = probit_scores(g.Y[None], eta, params.marginal) if probits is None else probits[g_i]
        logf = params.marginal.logpdf(g.Y[None], eta).sum(-1)
        out[:, g.idx] = _unit_terms(latent_from_probit(P, s), b, v, logf, s, params.omega_b, form)
    return out


def _mc_average(terms) -> tuple[float, float]:
    """Mean over draws of the unit-summed terms and a batch-means standard error."""
    per_draw = terms.sum(axis=1)
    R = per_draw.size
    nb = min(20, R)
    if nb < 2:
        return float(per_draw.mean()), float("nan")
    batches = np.array([c.mean() for c in np.array_split(per_draw, nb)])
    return float(per_draw.mean()), float(batches.std(ddof=1) / math.sqrt(nb))


# ---------------------------------------------------------------------------
# E-step
# ---------------------------------------------------------------------------


def _entropy(rng) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    if isinstance(rng, np.random.SeedSequence):
        return int(rng.generate_state(1, dtype=np.uint64)[0])
    if rng is None:
        return 0
    return int(rng.integers(0, 2**63))


T_DF = 5.0


class ChainNoise:
    """Per-unit random streams for the E-step chains.

    Unit ``i`` of run ``key`` draws from ``SeedSequence(entropy, spawn_key=key + (i,))``
    so its stream does not depend on how the units are scheduled.
    """

    def __init__(self, entropy: int, m: int, steps: int, key: tuple = ()):
        self.t = np.empty((steps, m))
        self.u_accept = np.empty((steps, m))
        self.u_v = np.empty((steps, m))
        for i in range(m):
            g = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=tuple(key) + (i,)))
            self.t[:, i] = g.standard_t(T_DF, steps)
            # (0, 1] keeps log(u) finite
            self.u_accept[:, i] = 1.0 - g.random(steps)
            self.u_v[:, i] = 1.0 - g.random(steps)

    @property
    def steps(self) -> int:
        return self.t.shape[0]


class _Target:
    """Log posterior of ``b`` given ``y`` (``v`` integrated out) for the units of one group."""

    def __init__(self, g: _Group, params: ModelParams):
        self.s = s = g.structure(params)
        self.Y = g.Y
        self.xb = g.X @ params.beta
        self.marginal = params.marginal
        self.omega = params.omega_b
        self.Pa = s.psi_inv @ s.shift
        self.prec_v = 1.0 + s.shift @ self.Pa

    def logp(self, b):
        """Unnormalized log posterior at ``b`` (shape ``(..., m_g)``) and the latent residuals."""
        eta = self.xb + b[..., None]
        W = latent_from_probit(probit_scores(self.Y, eta, self.marginal), self.s)
        logf = self.marginal.logpdf(self.Y, eta).sum(-1)
        return _unit_terms(W, b, None, logf, self.s, self.omega, "collapsed"), W

    def grid_moments(self, center, scale, nodes: int = 41, width: float = 6.0):
        """Posterior mean and standard deviation from a grid over ``center +/- width * scale``."""
        b = center + scale * np.linspace(-width, width, nodes)[:, None]
        lp, _ = self.logp(b)
        wts = np.exp(lp - lp.max(axis=0))
        wts /= wts.sum(axis=0)
        mean = np.sum(wts * b, axis=0)
        sd = np.sqrt(np.maximum(np.sum(wts * (b - mean) ** 2, axis=0), 1e-12))
        return mean, np.maximum(sd, 2.0 * width * scale / (nodes - 1) / 4.0)

    def draw_v(self, W, u):
        return truncnorm_from_uniform((W @ self.Pa) / self.prec_v, 1.0 / math.sqrt(self.prec_v), u)


def _log_t(x):
    return -0.5 * (T_DF + 1.0) * np.log1p(x * x / T_DF)


def _run_group(tg: _Target, noise: ChainNoise, cols, b, burn: int, R: int, chunk: int = 250):
    """Independence Metropolis-Hastings chains with a Student-t proposal per unit.

    The proposal is centred at a grid approximation of each unit's posterior,
    so the proposals of all steps can be evaluated in vectorized batches; only
    the accept/reject pass is sequential. ``v`` is drawn exactly given each
    retained ``b``.
    """
    c, h = tg.grid_moments(np.zeros(cols.size), np.full(cols.size, math.sqrt(tg.omega)), nodes=61)
    c, h = tg.grid_moments(c, h)
    h = 1.2 * h
    b = c.copy() if b is None else b.copy()
    lp, W = tg.logp(b)
    lq = _log_t((b - c) / h)
    m = cols.size
    bs = np.empty((R, m))
    vs = np.empty((R, m))
    accepted = np.zeros(m)
    for start in range(0, burn + R, chunk):
        stop = min(start + chunk, burn + R)
        tt = noise.t[start:stop][:, cols]
        prop = c + h * tt
        lp_all, W_all = tg.logp(prop)
        lq_all = _log_t(tt)
        log_u = np.log(noise.u_accept[start:stop][:, cols])
        for k, t in enumerate(range(start, stop)):
            ok = log_u[k] < lp_all[k] - lp + lq - lq_all[k]
            b = np.where(ok, prop[k], b)
            lp = np.where(ok, lp_all[k], lp)
            lq = np.where(ok, lq_all[k], lq)
            W = np.where(ok[:, None], W_all[k], W)
            if t >= burn:
                bs[t - burn] = b
                vs[t - burn] = tg.draw_v(W, noise.u_v[t, cols])
                accepted += ok
    return bs, vs, accepted / max(R, 1)


def _sample(groups, params: ModelParams, noise: ChainNoise, R: int, burn: int, state=None):
    m = sum(g.idx.size for g in groups)
    if burn + R > noise.steps:
        raise DomainError("noise store is shorter than burn-in plus draws")
    bank = SampleBank(np.empty((R, m)), np.empty((R, m)), np.empty(m))
    for g in groups:
        b0 = None if state is None else state[g.idx]
        bs, vs, acc = _run_group(_Target(g, params), noise, g.idx, b0, burn, R)
        bank.b[:, g.idx] = bs
        bank.v[:, g.idx] = vs
        bank.acceptance[g.idx] = acc
    return bank


def e_step_q(
    dataset: LongitudinalDataset,
    params_current: ModelParams,
    config: McemConfig,
    rng,
    n_draws: int | None = None,
    form: str = "printed",
):
    """Monte Carlo E-step: per-unit posterior draws and the averaged log-likelihood.

    Runs ``config.burn_in`` warm-up steps followed by ``n_draws`` (default
    ``config.r_init``) retained draws per unit. Returns ``(bank, Q, Q_se)``
    where ``Q`` averages the complete-data log-likelihood of ``form`` over the
    draws at ``params_current``.
    """
    R = config.r_init if n_draws is None else int(n_draws)
    if R < 1:
        raise DomainError("n_draws must be >= 1")
    groups = _groups(dataset)
    noise = ChainNoise(_entropy(rng), dataset.m, config.burn_in + R)
    bank = _sample(groups, params_current, noise, R, config.burn_in)
    q, se = _mc_average(_bank_terms(groups, params_current, bank, form))
    return bank, q, se


# ---------------------------------------------------------------------------
# M-steps
# ---------------------------------------------------------------------------


def _design(dataset: LongitudinalDataset):
    X = np.concatenate([u.X for u in dataset.units])
    y = np.concatenate([u.y for u in dataset.units])
    unit = np.concatenate([np.full(u.n, i) for i, u in enumerate(dataset.units)])
    return X, y, unit


def closed_form_beta(dataset: LongitudinalDataset, b) -> np.ndarray:
    """Least squares of ``log y_ij - b_i`` on ``x_ij``, the Newton starting point."""
    X, y, unit = _design(dataset)
    sol, _, rank, _ = np.linalg.lstsq(X, np.log(y) - np.asarray(b, dtype=float)[unit], rcond=None)
    if rank < X.shape[1]:
        raise DomainError("fixed-effect design matrix is rank deficient")
    return sol


def m_step_beta(dataset: LongitudinalDataset, sample_banks: SampleBank, params: ModelParams, tol: float = 1e-10):
    """Newton root of the Monte Carlo averaged marginal score for ``beta``.

    With ``c_i`` the bank mean of ``exp(-b_i)`` the score is
    ``k sum_ij x_ij (y_ij c_i exp(-x_ij beta) - 1)``.
    """
    X, y, unit = _design(dataset)
    k = params.marginal.k
    c = np.exp(-sample_banks.b).mean(axis=0)[unit]
    yc = y * c

    def objective(beta):
        eta = X @ beta
        return -k * np.sum(yc * np.exp(-eta) + eta)

    beta = closed_form_beta(dataset, sample_banks.b_mean)
    for _ in range(100):
        r = yc * np.exp(-(X @ beta))
        score = k * X.T @ (r - 1.0)
        if np.max(np.abs(score)) <= tol:
            return beta
        H = k * (X * r[:, None]).T @ X
        step = np.linalg.solve(H, score)
        f0, t = objective(beta), 1.0
        while objective(beta + t * step) < f0 - 1e-12 * abs(f0) and t > 1e-8:
            t *= 0.5
        beta = beta + t * step
    raise DomainError("Newton iterations for beta did not converge in 100 steps")


def _log_mills(x):
    """``log(phi(x) / Phi(x))``."""
    return -0.5 * x * x - HALF_LOG_2PI - _log_ndtr(x)


def _beta_objective(groups, params: ModelParams, bank: SampleBank):
    """Bank-averaged collapsed log-likelihood as a function of ``beta``, with its gradient.

    The latent residuals move with ``beta`` through the probability-integral
    transform: ``dw/deta = -y f(y | eta) / sn_1(w)`` for both log-link families.
    """
    k = params.marginal.k
    R = bank.R

    def f(beta):
        p = params.replace(beta=beta)
        total, grad = 0.0, np.zeros(beta.size)
        for g in groups:
            s = g.structure(p)
            b = bank.b[:, g.idx]
            eta = (g.X @ beta)[None] + b[..., None]
            raw = p.marginal.probit(g.Y[None], eta)
            W = latent_from_probit(np.clip(raw, -PROBIT_CLIP, PROBIT_CLIP), s)
            logf = p.marginal.logpdf(g.Y[None], eta)
            log_sn1 = LOG_2 - HALF_LOG_2PI - 0.5 * W * W + _log_ndtr(W * s.marg_lam)
            total += float(np.sum(_log_snn(W, s)) - np.sum(log_sn1) + np.sum(logf))
            # d/dW of log SN_n(W) - sum_j log SN_1(W_j)
            dW = -W @ s.sigma_inv + np.exp(_log_mills(W @ s.alpha))[..., None] * s.alpha
            dW += W - s.marg_lam * np.exp(_log_mills(W * s.marg_lam))
            dw_deta = -np.exp(np.log(g.Y[None]) + logf - log_sn1)
            dw_deta[np.abs(raw) >= PROBIT_CLIP] = 0.0
            d_eta = dW * dw_deta + k * (g.Y[None] * np.exp(-eta) - 1.0)
            grad += np.einsum("rin,inp->p", d_eta, g.X)
        return total / R, grad / R

    return f


def m_step_beta_copula(
    dataset: LongitudinalDataset,
    sample_banks: SampleBank,
    params: ModelParams,
    groups=None,
    start=None,
    gtol: float = 1e-6,
):
    """Maximize the bank-averaged collapsed log-likelihood over ``beta``.

    Starts from ``start`` or from the marginal score root of :func:`m_step_beta`.
    """
    groups = _groups(dataset) if groups is None else groups
    x0 = m_step_beta(dataset, sample_banks, params) if start is None else np.asarray(start, dtype=float)
    f = _beta_objective(groups, params, sample_banks)

    def neg(beta):
        v, g = f(beta)
        return -v, -g

    res = optimize.minimize(neg, x0, jac=True, method="BFGS", options={"gtol": gtol, "maxiter": 200})
    if not np.all(np.isfinite(res.x)):
        raise DomainError("beta update diverged")
    return res.x


def beta_score(dataset: LongitudinalDataset, sample_banks: SampleBank, params: ModelParams) -> np.ndarray:
    X, y, unit = _design(dataset)
    c = np.exp(-sample_banks.b).mean(axis=0)[unit]
    return params.marginal.k * X.T @ (y * c * np.exp(-(X @ params.beta)) - 1.0)


def fisher_information(dataset: LongitudinalDataset, params: ModelParams) -> np.ndarray:
    X, _, _ = _design(dataset)
    return params.marginal.k * X.T @ X


def fisher_se(dataset: LongitudinalDataset, params: ModelParams) -> np.ndarray:
    """Standard errors ``diag(I(beta)^{-1})^{1/2}`` with ``I(beta) = k X'X``."""
    info = fisher_information(dataset, params)
    if np.linalg.matrix_rank(info) < info.shape[0]:
        raise DomainError("Fisher information is singular")
    return np.sqrt(np.diag(np.linalg.inv(info)))


def update_omega(sample_banks: SampleBank) -> float:
    """``m^-1 sum_i`` (bank mean of ``b_i^2``)."""
    return float(np.mean(sample_banks.b**2))


def _bounded_max(f, lo, hi, start=None, width=0.2, scan=25, xatol=1e-6) -> BoundedEstimate:
    """Maximize ``f`` on ``[lo, hi]``.

    Without ``start`` a ``scan``-point grid picks the bracket for Brent's method,
    which guards against the local optima the Monte Carlo objectives can have.
    With ``start`` the search is local: Brent on ``start +/- width``, with the
    bracket moved outward while the optimum sits on its edge.
    """
    edge = 1e-4 * (hi - lo)
    if start is None:
        grid = np.linspace(lo, hi, scan)
        vals = np.array([f(x) for x in grid])
        k = int(np.nanargmax(vals))
        a, b = grid[max(k - 1, 0)], grid[min(k + 1, scan - 1)]
    else:
        a, b = max(lo, start - width), min(hi, start + width)
    for _ in range(20):
        res = optimize.minimize_scalar(lambda x: -f(x), bounds=(a, b), method="bounded", options={"xatol": xatol})
        x = float(res.x)
        if x - a < edge and a > lo:
            a, b = max(lo, a - 2 * width), a + edge
        elif b - x < edge and b < hi:
            a, b = b - edge, min(hi, b + 2 * width)
        else:
            break
    return BoundedEstimate(x, bool(x - lo < edge or hi - x < edge), float(-res.fun))


def _probits(groups, params: ModelParams, bank: SampleBank):
    out = []
    for g in groups:
        eta = (g.X @ params.beta)[None] + bank.b[:, g.idx][..., None]
        out.append(probit_scores(g.Y[None], eta, params.marginal))
    return out


def _check_lambda_bounds(groups, bounds):
    for g in groups:
        for lam in bounds:
            d = lambda_to_delta(np.full(g.times.size, float(lam)))
            if np.sqrt(d @ d) > 1.0 - 1e-6:
                raise DomainError(f"lambda bound {lam} pushes |delta| past 1 - 1e-6")


def m_step_lambda(
    dataset: LongitudinalDataset,
    sample_banks: SampleBank,
    params: ModelParams,
    bounds=(-10.0, 10.0),
    form: str = "collapsed",
    groups=None,
    start: float | None = None,
) -> BoundedEstimate:
    """Bounded 1-D maximization of the bank-averaged log-likelihood over ``lambda_star``.

    ``start`` switches from a global scan to a local search around it.
    """
    groups = _groups(dataset) if groups is None else groups
    _check_lambda_bounds(groups, bounds)
    P = _probits(groups, params, sample_banks)

    def f(lam):
        terms = _bank_terms(groups, params.replace(lambda_star=lam), sample_banks, form, P)
        return terms.sum() / sample_banks.R

    # search in delta = lam / sqrt(1 + lam^2), which is bounded and denser near 0
    def to_lam(d):
        return d / math.sqrt(1.0 - d * d)

    d_start = None if start is None else float(lambda_to_delta(start))
    est = _bounded_max(lambda d: f(to_lam(d)), lambda_to_delta(bounds[0]), lambda_to_delta(bounds[1]), d_start)
    return BoundedEstimate(to_lam(est.value), est.at_boundary, est.objective)


def m_step_xi(
    dataset: LongitudinalDataset,
    sample_banks: SampleBank,
    params: ModelParams,
    method: str = "likelihood",
    bounds=None,
    form: str = "collapsed",
    groups=None,
    start: float | None = None,
) -> BoundedEstimate:
    """Update the correlation decay ``xi``.

    ``likelihood`` maximizes the bank-averaged log-likelihood over ``log xi``;
    ``l2`` fits the exponential correlation to the second moments of the
    latent residuals ``z_i - b_i - Sigma^{1/2} delta* v_i`` pooled over all
    draws, with ``a a'`` (``a = Sigma^{1/2} delta*`` at the current
    parameters) added back so that their target is ``Sigma`` rather than
    ``Psi`` (balanced designs only).
    """
    groups = _groups(dataset) if groups is None else groups
    if bounds is None:
        bounds = (min(default_xi_floor(g.times) for g in groups), XI_MAX)
    if method == "l2":
        if len(groups) != 1:
            raise DomainError("the L2 path for xi needs a balanced design")
        g = groups[0]
        s = g.structure(params)
        eta = (g.X @ params.beta)[None] + sample_banks.b[..., None]
        W = latent_from_probit(probit_scores(g.Y[None], eta, params.marginal), s)
        res = (W - sample_banks.v[..., None] * s.shift).reshape(-1, s.n)
        # the residuals have covariance Psi = Sigma - a a'; add a a' back
        moment = res.T @ res / res.shape[0] + np.outer(s.shift, s.shift)
        est = estimate_xi_l2(second_moment_to_corr(moment), g.times, bounds)
        return BoundedEstimate(est.xi, est.at_boundary, est.objective)
    if method != "likelihood":
        raise DomainError(f"unknown xi method {method!r}")
    P = _probits(groups, params, sample_banks)

    def f(log_xi):
        terms = _bank_terms(groups, params.replace(xi=math.exp(log_xi)), sample_banks, form, P)
        return terms.sum() / sample_banks.R

    log_start = None if start is None else math.log(start)
    est = _bounded_max(f, math.log(bounds[0]), math.log(bounds[1]), log_start, scan=15)
    return BoundedEstimate(math.exp(est.value), est.at_boundary, est.objective)


# ---------------------------------------------------------------------------
# observed-data log-likelihood
# ---------------------------------------------------------------------------


def observed_loglik(dataset: LongitudinalDataset, params: ModelParams, centers=None, scales=None, nodes: int = 30):
    """Marginal log-likelihood by adaptive Gauss-Hermite quadrature over each ``b_i``.

    ``centers`` and ``scales`` locate each unit's posterior (for example bank
    means and standard deviations); by default the prior is used.
    """
    return float(_observed_loglik(_groups(dataset), dataset.m, params, centers, scales, nodes).sum())


def _observed_loglik(groups, m, params: ModelParams, centers=None, scales=None, nodes: int = 30):
    x, wts = special.roots_hermitenorm(nodes)
    sd = math.sqrt(params.omega_b)
    c = np.zeros(m) if centers is None else np.asarray(centers, dtype=float)
    h = np.full(m, sd) if scales is None else np.maximum(np.asarray(scales, dtype=float), 1e-3) * 1.5
    out = np.empty(m)
    for g in groups:
        s = g.structure(params)
        cg, hg = c[g.idx], h[g.idx]
        b = cg[None] + hg[None] * x[:, None]  # (K, m_g)
        eta = (g.X @ params.beta)[None] + b[..., None]
        W = latent_from_probit(probit_scores(g.Y[None], eta, params.marginal), s)
        logf = params.marginal.logpdf(g.Y[None], eta).sum(-1)
        lj = _unit_terms(W, b, None, logf, s, params.omega_b, "collapsed")
        out[g.idx] = np.log(hg) + special.logsumexp(lj + (np.log(wts) + 0.5 * x * x)[:, None], axis=0)
    return out


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    params: ModelParams
    se: dict
    loglik_trace: np.ndarray  # observed-data log-likelihood after each iteration
    q_trace: np.ndarray  # bank-averaged complete-data log-likelihood at the new iterate
    q_se: np.ndarray
    param_trace: np.ndarray
    converged: bool
    iterations: int
    warnings: list[str] = field(default_factory=list)
    b_mean: np.ndarray | None = None
    b_sd: np.ndarray | None = None
    restart: int = 0
    restart_logliks: list[float] = field(default_factory=list)
    bank: SampleBank | None = None

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])

    @property
    def e_alpha_plus_b(self) -> float:
        """Average fitted ``alpha + b_i`` over units."""
        return float(self.params.beta[0] + np.mean(self.b_mean))

    @property
    def var_alpha_plus_b(self) -> float:
        return float(self.params.omega_b)

    @property
    def lambda_bar(self) -> float:
        return float(self.params.lambda_star)

    @property
    def n_params(self) -> int:
        return self.params.beta.size + 2 + int("lambda_star" in self.se)


def _relative_change(new: np.ndarray, old: np.ndarray, floor: float) -> float:
    return float(np.max(np.abs(new - old) / np.maximum(np.abs(old), floor)))


def _run(dataset, groups, start: ModelParams, config: McemConfig, entropy: int, key: int):
    steps = config.burn_in + config.r_max
    noise = ChainNoise(entropy, dataset.m, steps, key=(key,))
    p = start
    state = None
    ll, qs, qse, ptrace, notes = [], [], [], [], []
    stable, converged, it = 0, False, 0
    bank = None
    for it in range(1, config.max_iter + 1):
        R = config.draws_at(it - 1)
        burn = config.burn_in if state is None else min(config.warm_burn_in, config.burn_in)
        bank = _sample(groups, p, noise, R, burn, state)
        state = bank.b[-1].copy()
        small = bank.thin(config.m_step_draws)
        if config.beta_method == "copula":
            beta = m_step_beta_copula(dataset, small, p, groups=groups, start=p.beta if it > 1 else None)
        else:
            beta = m_step_beta(dataset, bank, p)
        new = p.replace(beta=beta)
        if config.freeze_lambda is None:
            hint = None if it == 1 else p.lambda_star
            est = m_step_lambda(dataset, small, new, config.lambda_bounds, groups=groups, start=hint)
            if est.at_boundary:
                notes.append(f"iteration {it}: lambda_star at bound {est.value:.4g}")
            new = new.replace(lambda_star=est.value)
        hint = None if it == 1 else p.xi
        est = m_step_xi(dataset, small, new, method=config.xi_method, groups=groups, start=hint)
        if est.at_boundary:
            notes.append(f"iteration {it}: xi at bound {est.value:.4g}")
        new = new.replace(xi=est.value)
        new = new.replace(omega_b=update_omega(bank))
        q, q_se = _mc_average(_bank_terms(groups, new, small, "collapsed"))
        ll_i = float(_observed_loglik(groups, dataset.m, new, bank.b_mean, bank.b_sd, config.quad_nodes).sum())
        if not (np.isfinite(q) and np.isfinite(ll_i)):
            raise DomainError(f"non-finite log-likelihood at iteration {it}")
        rel = _relative_change(new.vector(), p.vector(), config.rel_floor)
        p = new
        ll.append(ll_i)
        qs.append(q)
        qse.append(q_se)
        ptrace.append(p.vector())
        stable = stable + 1 if rel < config.rel_tol else 0
        if stable >= config.stable_iters:
            converged = True
            break
    return dict(
        params=p,
        bank=bank,
        loglik=np.array(ll),
        q=np.array(qs),
        q_se=np.array(qse),
        ptrace=np.array(ptrace),
        converged=converged,
        iterations=it,
        notes=notes,
    )


def default_initial(dataset: LongitudinalDataset, marginal) -> ModelParams:
    """Crude starting values: least-squares ``beta`` on ``log y`` and moderate latent parameters."""
    beta = closed_form_beta(dataset, np.zeros(dataset.m))
    if marginal.family == "exponential":
        # E log Y = eta - Euler's constant for a unit-rate exponential
        beta[0] += np.euler_gamma
    X, y, unit = _design(dataset)
    resid = np.log(y) - X @ beta
    means = np.bincount(unit, resid) / np.bincount(unit)
    omega = max(float(np.var(means)), 0.1)
    gaps = np.concatenate([np.diff(np.sort(u.times)) for u in dataset.units])
    xi = 0.5 / max(float(np.median(gaps)), 1e-8)
    return ModelParams(beta, omega, min(xi, XI_MAX / 2), 0.5, marginal)


def _restart_start(initial: ModelParams, entropy: int, k: int, config: McemConfig) -> ModelParams:
    if k == 0:
        p = initial
    else:
        g = np.random.default_rng(np.random.SeedSequence(entropy, spawn_key=(k, 0)))
        f_om, f_xi = np.exp(g.uniform(-math.log(2), math.log(2), size=2))
        lam = initial.lambda_star + g.uniform(-1.0, 1.0)
        lo, hi = config.lambda_bounds
        p = initial.replace(omega_b=initial.omega_b * f_om, xi=min(initial.xi * f_xi, XI_MAX / 2))
        p = p.replace(lambda_star=float(np.clip(lam, lo + 0.1, hi - 0.1)))
    if config.freeze_lambda is not None:
        p = p.replace(lambda_star=float(config.freeze_lambda))
    return p


def fit(dataset: LongitudinalDataset, initial: ModelParams | None, config: McemConfig | None = None, rng=0, marginal=None):
    """Fit the model by Monte Carlo EM.

    Each restart iterates the E-step and the ``beta -> lambda* -> xi -> omega_b``
    M-steps until the largest relative parameter change stays below
    ``config.rel_tol`` for ``config.stable_iters`` consecutive iterations.
    The restart with the highest final observed-data log-likelihood is kept.
    ``rng`` is an integer seed or a ``numpy`` generator.
    """
    config = McemConfig() if config is None else config
    if initial is None:
        if marginal is None:
            raise DomainError("need an initial ModelParams or a marginal spec")
        initial = default_initial(dataset, marginal)
    groups = _groups(dataset)
    entropy = _entropy(rng)
    runs, failures = [], []
    for k in range(config.restarts):
        start = _restart_start(initial, entropy, k, config)
        try:
            runs.append((k, _run(dataset, groups, start, config, entropy, k)))
        except (DomainError, FloatingPointError, np.linalg.LinAlgError) as exc:
            failures.append((k, str(exc)))
    if not runs:
        raise FitError("all restarts diverged", failures)
    best_k, best = max(runs, key=lambda kr: kr[1]["loglik"][-1])
    p = best["params"]
    notes = list(best["notes"]) + [f"restart {k} failed: {msg}" for k, msg in failures]
    if not best["converged"]:
        notes.append(f"no convergence after {best['iterations']} iterations")
    se = {"beta": fisher_se(dataset, p), "omega_b": None, "xi": None}
    if config.freeze_lambda is None:
        se["lambda_star"] = None
    bank = best["bank"]
    return FitResult(
        params=p,
        se=se,
        loglik_trace=best["loglik"],
        q_trace=best["q"],
        q_se=best["q_se"],
        param_trace=best["ptrace"],
        converged=best["converged"],
        iterations=best["iterations"],
        warnings=notes,
        b_mean=bank.b_mean,
        b_sd=bank.b_sd,
        restart=best_k,
        restart_logliks=[float(r["loglik"][-1]) for _, r in runs],
        bank=bank,
    )


def warn_if_unconverged(result: FitResult):
    if not result.converged:
        _warnings.warn("; ".join(result.warnings) or "MCEM did not converge", RuntimeWarning)
