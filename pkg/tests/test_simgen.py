import math

import numpy as np
import pytest
from scipy import stats

from skewglmm.marginals import MarginalSpec
from skewglmm.simgen import DesignSpec, bivariate_design_matrices, gen_bivariate, gen_univariate, generate
from skewglmm.skewnormal import DomainError


def test_design_validation():
    with pytest.raises(DomainError):
        DesignSpec("trivariate")
    with pytest.raises(DomainError):
        DesignSpec(m=1)
    with pytest.raises(DomainError):
        DesignSpec(n_per_unit=1)
    with pytest.raises(DomainError):
        DesignSpec("bivariate", m=201)


def test_univariate_shape_and_truth():
    ds, truth = gen_univariate(DesignSpec(seed=1))
    assert ds.m == 200 and ds.n_obs == 1000 and ds.balanced
    assert all(np.array_equal(u.times, np.arange(1.0, 6.0)) for u in ds.units)
    assert all(np.all(u.y > 0) for u in ds.units)
    p = truth.params
    assert p.beta.tolist() == [3.0] and p.omega_b == 2.0 and p.xi == 0.2 and p.lambda_star == 1.0
    assert truth.e_alpha_plus_b == 3.0 and truth.var_alpha_plus_b == 2.0
    assert truth.to_dict()["params"]["marginal"]["family"] == "exponential"


def test_univariate_intercept_variance():
    m = 10_000
    _, truth = gen_univariate(DesignSpec(m=m, seed=2))
    a = 3.0 + truth.b
    # Var of a sample variance of normals is 2 sigma^4 / (m - 1)
    assert abs(a.var(ddof=1) - 2.0) <= 4 * math.sqrt(2 * 4.0 / (m - 1))
    assert abs(a.mean() - 3.0) <= 4 * math.sqrt(2.0 / m)


def test_unit_medians_increase_with_intercept():
    m = 4000
    ds, truth = gen_univariate(DesignSpec(m=m, seed=3))
    med = np.array([np.median(u.y) for u in ds.units])
    assert stats.spearmanr(truth.b, med).statistic > 0.5
    # pooled by intercept quartile the medians are ordered
    q = np.digitize(truth.b, np.quantile(truth.b, [0.25, 0.5, 0.75]))
    pooled = [np.median(np.concatenate([ds.units[i].y for i in np.flatnonzero(q == k)])) for k in range(4)]
    assert np.all(np.diff(pooled) > 0)


def test_bivariate_design():
    ds, truth = gen_bivariate(DesignSpec("bivariate", seed=4))
    X0 = ds.units[0].X
    assert X0.shape == (5, 3)
    assert X0[:, 1].tolist() == [-2.0, -1.0, 0.0, 1.0, 2.0]
    groups = np.array([u.X[0, 2] for u in ds.units])
    assert groups[:100].sum() == 100 and groups[100:].sum() == 0
    assert all(np.all(u.X[:, 2] == u.X[0, 2]) for u in ds.units)
    assert truth.params.beta.tolist() == [1.0, 2.0, 1.0] and truth.params.omega_b == 4.0
    assert ds.covariate_names == ["intercept", "t", "group"]
    assert np.array_equal(bivariate_design_matrices(4, 5)[1], X0[:, :] * [1, 1, 1])


def test_determinism_and_independent_seeds():
    a, _ = generate(DesignSpec(seed=5))
    b, _ = generate(DesignSpec(seed=5))
    assert all(np.array_equal(u.y, v.y) for u, v in zip(a.units, b.units))
    c, _ = generate(DesignSpec(seed=6))
    ma = np.array([np.log(u.y).mean() for u in a.units])
    mc = np.array([np.log(u.y).mean() for u in c.units])
    assert abs(np.corrcoef(ma, mc)[0, 1]) < 4 / math.sqrt(a.m)


@pytest.mark.parametrize("marginal", [MarginalSpec(), MarginalSpec("gamma", 3.0)], ids=["exp", "gamma3"])
def test_marginals_at_true_predictor(marginal):
    # 10^4 pooled draws with b known: PIT values are uniform
    ds, truth = gen_bivariate(DesignSpec("bivariate", m=2000, seed=7, marginal=marginal))
    u = np.concatenate([marginal.cdf(un.y, un.X @ truth.params.beta + b) for un, b in zip(ds.units, truth.b)])
    assert u.size == 10_000
    assert stats.kstest(u, "uniform").pvalue > 0.01
