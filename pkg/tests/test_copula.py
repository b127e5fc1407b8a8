import math

import numpy as np
import pytest
from conftest import make_params, make_unit
from scipy import special, stats

from skewglmm import copula
from skewglmm.copula import (
    U_CLAMP,
    joint_cdf,
    joint_density,
    joint_logdensity,
    latent_structure,
    sample_response,
    to_latent,
)
from skewglmm.data import Unit
from skewglmm.marginals import MarginalSpec
from skewglmm.simgen import simulate_dataset
from skewglmm.skewnormal import DomainError, sn_cdf_uv, sn_quantile_uv

GAM3 = MarginalSpec("gamma", 3.0)


def _unit(n, y=None, beta=(0.3,)):
    return make_unit(n, beta=beta, y=y)


# --- to_latent ----------------------------------------------------------------


def test_to_latent_median_maps_to_zero():
    u = _unit(1, y=[math.log(2.0)], beta=(0.0,))
    p = make_params(beta=(0.0,), lam=0.0)
    assert abs(to_latent([math.log(2.0)], u, p, 0.0)[0]) <= 1e-12


@pytest.mark.parametrize("lam", [0.0, 1.0, 3.0])
def test_to_latent_is_probability_integral_transform(lam):
    p = make_params(beta=(0.3,), lam=lam, xi=0.4)
    unit = _unit(3)
    s = latent_structure(unit.times, p.xi, p.lambda_star)
    for q in (0.05, 0.5, 0.93):
        y = p.marginal.ppf(np.full(3, q), unit.X @ p.beta + 0.4)
        z = to_latent(y, unit, p, 0.4)
        assert np.max(np.abs(z - sn_quantile_uv(np.full(3, q), 0.4, 1.0, s.marg_lam))) <= 1e-8


@pytest.mark.parametrize("marginal", [MarginalSpec(), GAM3], ids=["exp", "gamma3"])
def test_to_latent_round_trip(marginal, rng):
    p = make_params(beta=(0.2,), lam=1.0, family=marginal.family, shape=marginal.k)
    unit = _unit(4)
    s = latent_structure(unit.times, p.xi, p.lambda_star)
    for _ in range(5):
        b = rng.normal()
        y = rng.gamma(2.0, size=4)
        z = to_latent(y, unit, p, b)
        lhs = sn_cdf_uv(z, b, 1.0, s.marg_lam)
        assert np.max(np.abs(lhs - marginal.cdf(y, unit.X @ p.beta + b))) <= 1e-8


def test_to_latent_increasing_and_domain():
    p = make_params(lam=2.0)
    unit = _unit(2)
    ys = np.geomspace(0.01, 20, 60)
    z = np.array([to_latent([y, 1.0], unit, p, 0.1)[0] for y in ys])
    assert np.all(np.diff(z) > 0)
    with pytest.raises(DomainError):
        to_latent([0.0, 1.0], unit, p, 0.0)
    with pytest.raises(DomainError):
        to_latent([1.0, 1.0], unit, p, np.inf)


def test_clamping_counts_and_stays_finite():
    p = make_params(lam=1.0)
    unit = _unit(2)
    before = copula.clamp_counter.count
    z = to_latent([1e-300, 800.0], unit, p, 0.0)
    assert copula.clamp_counter.count - before == 2
    assert np.all(np.isfinite(z))
    assert np.isfinite(joint_logdensity([1e-300, 800.0], unit, p, 0.0))
    lo, hi = sn_quantile_uv(np.array([U_CLAMP, 1 - U_CLAMP]), 0.0, 1.0, latent_structure(unit.times, p.xi, 1.0).marg_lam)
    assert z[0] == pytest.approx(lo, abs=1e-8) and z[1] == pytest.approx(hi, abs=1e-8)


# --- joint density --------------------------------------------------------------


@pytest.mark.parametrize("marginal", [MarginalSpec(), GAM3], ids=["exp", "gamma3"])
def test_n1_density_equals_marginal(marginal):
    p = make_params(beta=(0.4,), lam=2.5, family=marginal.family, shape=marginal.k)
    unit = _unit(1)
    for y in (0.05, 0.9, 4.0):
        for b in (-1.0, 0.3):
            got = joint_logdensity([y], unit, p, b)
            assert abs(got - marginal.logpdf(y, 0.4 + b)) <= 1e-12


def test_independence_copula_gives_product():
    p = make_params(beta=(0.1,), lam=0.0, xi=50.0)
    unit = Unit("u", np.array([0.0, 20.0]), np.ones(2), np.ones((2, 1)))
    # exp(-50 * 20) underflows to 0, so Sigma is exactly the identity
    assert np.array_equal(latent_structure(unit.times, 50.0, 0.0).sigma, np.eye(2))
    for y in ([0.3, 2.0], [1.5, 0.01]):
        ref = np.sum(p.marginal.logpdf(np.array(y), 0.1 - 0.2))
        assert abs(joint_logdensity(y, unit, p, -0.2) - ref) <= 1e-12


@pytest.mark.parametrize("xi", [0.2, 1.0])
def test_lambda_zero_is_gaussian_copula(xi, rng):
    p = make_params(beta=(0.2, -0.5), lam=0.0, xi=xi)
    unit = make_unit(3, beta=(0.2, -0.5), seed=4)
    S = latent_structure(unit.times, xi, 0.0).sigma
    for _ in range(5):
        y = rng.exponential(size=3)
        b = rng.normal()
        eta = unit.X @ p.beta + b
        x = special.ndtri(p.marginal.cdf(y, eta))
        ref = (
            stats.multivariate_normal(np.zeros(3), S).logpdf(x)
            - np.sum(stats.norm.logpdf(x))
            + np.sum(p.marginal.logpdf(y, eta))
        )
        assert abs(joint_logdensity(y, unit, p, b) - ref) <= 1e-10


def test_two_dim_density_integrates_to_one():
    # integrate on probit scales: y_j = F^{-1}(Phi(x_j)), dy_j = phi(x_j) / f(y_j) dx_j
    p = make_params(beta=(0.3,), lam=1.0, xi=0.2)
    unit = _unit(2)
    b = 0.25
    eta = 0.3 + b
    nodes, weights = np.polynomial.legendre.leggauss(240)
    x = 8.0 * nodes
    w = 8.0 * weights
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    U = special.ndtr(np.stack([X1, X2], axis=-1))
    inner = (U > 0) & (U < 1)
    ok = inner.all(axis=-1)
    Y = np.ones_like(U)
    Y[ok] = p.marginal.ppf(U[ok], eta)
    logc = joint_logdensity(Y[ok], unit, p, b) - np.sum(p.marginal.logpdf(Y[ok], eta), axis=-1)
    integrand = np.zeros(X1.shape)
    integrand[ok] = np.exp(logc + np.sum(stats.norm.logpdf(np.stack([X1, X2], -1)[ok]), axis=-1))
    total = w @ integrand @ w
    assert abs(total - 1.0) <= 1e-5


def test_joint_density_is_exp_of_log():
    p = make_params(lam=1.0)
    unit = _unit(3)
    y = [0.4, 1.1, 2.2]
    assert joint_density(y, unit, p, 0.2) == pytest.approx(math.exp(joint_logdensity(y, unit, p, 0.2)), rel=1e-14)
    stacked = joint_logdensity(np.array([y, y]), unit, p, 0.2)
    assert stacked.shape == (2,) and stacked[0] == joint_logdensity(y, unit, p, 0.2)


# --- joint cdf ------------------------------------------------------------------


def test_joint_cdf_examples(rng):
    p = make_params(beta=(0.0,), lam=1.0)
    unit = _unit(2)
    c, se = joint_cdf([1e6, 1e6], unit, p, 0.0, 20000, rng)
    assert abs(c - 1.0) <= max(3 * se, 1e-12)
    u1 = _unit(1)
    c, se = joint_cdf([0.8], u1, p, 0.1, 40000, rng)
    assert abs(c - p.marginal.cdf(0.8, 0.1)) <= 3 * se
    pi = make_params(beta=(0.0,), lam=0.0, xi=50.0)
    ui = Unit("u", np.array([0.0, 20.0]), np.ones(2), np.ones((2, 1)))
    med = math.log(2.0)
    c, se = joint_cdf([med, med], ui, pi, 0.0, 40000, rng)
    assert abs(c - 0.25) <= 3 * se
    with pytest.raises(DomainError):
        joint_cdf([1.0, 1.0], unit, p, 0.0, 999, rng)


# --- sampling -------------------------------------------------------------------


def test_sample_response_inverts_to_latent(rng):
    p = make_params(beta=(0.3,), lam=1.5)
    unit = _unit(4)
    s = latent_structure(unit.times, p.xi, p.lambda_star)
    z = copula.sample_latent_z(s, 0.7, rng)[0]
    y = copula.responses_from_latent(z, unit.X @ p.beta, 0.7, s, p.marginal)
    assert np.max(np.abs(to_latent(y, unit, p, 0.7) - z)) <= 1e-8
    assert np.all(sample_response(unit, p, 0.7, rng) > 0)


@pytest.mark.parametrize("marginal", [MarginalSpec(), GAM3], ids=["exp", "gamma3"])
def test_simulated_marginals_match_family(marginal):
    # b = 0 for every unit so each column is an iid sample of the stated marginal
    p = make_params(beta=(0.5,), lam=1.0, xi=0.2, family=marginal.family, shape=marginal.k)
    m, n = 100_000, 3
    times = np.arange(1.0, n + 1.0)
    X = [np.ones((n, 1))] * m
    ds, _ = simulate_dataset(X, times, p, np.random.default_rng(7), b=np.zeros(m))
    Y = np.array([u.y for u in ds.units])
    for j in range(n):
        pval = stats.kstest(Y[:, j], lambda y: marginal.cdf(y, 0.5)).pvalue
        assert pval > 0.01
    se = Y[:, 0].std() / math.sqrt(m)
    assert abs(Y[:, 0].mean() - math.exp(0.5)) <= 4 * se


def test_kendall_tau_increases_as_xi_decreases():
    m, n = 4000, 2
    times = np.array([1.0, 2.0])
    X = [np.ones((n, 1))] * m
    taus = []
    for xi in (2.0, 0.7, 0.1):
        p = make_params(beta=(0.0,), lam=1.0, xi=xi)
        ds, _ = simulate_dataset(X, times, p, np.random.default_rng(11), b=np.zeros(m))
        Y = np.array([u.y for u in ds.units])
        taus.append(stats.kendalltau(Y[:, 0], Y[:, 1]).statistic)
    assert taus[0] < taus[1] < taus[2]
