import math

import numpy as np
import pytest
from scipy import integrate

from skewglmm import harness
from skewglmm.harness import ReplicateRecord, summarize
from skewglmm.marginals import MarginalSpec
from skewglmm.mcem import McemConfig
from skewglmm.simgen import DesignSpec, gen_univariate
from skewglmm.skewnormal import DomainError


def _rec(i, e, b1=2.0, se=0.1, copula="skewnormal"):
    est = {"E[alpha+b]": e, "Var[alpha+b]": 4.0, "xi": 0.2, "lambda_bar": 1.0, "beta1": b1, "beta2": 1.0}
    return ReplicateRecord(i, copula, est, {"beta1": se, "beta2": se}, True, 10)


def test_summarize_statistics():
    recs = [_rec(0, 0.9, 2.05), _rec(1, 1.1, 2.5)]
    rows = {r["parameter"]: r for r in summarize(recs, 2)}
    e = rows["E[alpha+b]"]
    assert e["mc_mean"] == pytest.approx(1.0) and e["mc_sd"] == pytest.approx(math.sqrt(0.02))
    assert e["mse"] == pytest.approx(0.01) and e["ec"] is None
    # coverage: |2.05 - 2| <= 1.96 * 0.1 but |2.5 - 2| is not
    assert rows["beta1"]["ec"] == 0.5
    assert rows["xi"]["ec"] is None and rows["lambda_bar"]["ec"] is None


def test_summarize_single_replicate_blank_sd():
    rows = summarize([_rec(0, 1.0)], 2)
    assert all(r["mc_sd"] is None for r in rows)


def test_summarize_splits_arms():
    rows = summarize([_rec(0, 1.0), _rec(0, 2.0, copula="normal")], 2)
    assert [r["copula"] for r in rows[:1] + rows[-1:]] == ["skewnormal", "normal"]


def test_derived_seeds_and_config():
    assert harness.derived_seed(0, 1, 0) == harness.derived_seed(0, 1, 0)
    assert len({harness.derived_seed(0, i, k) for i in range(10) for k in (0, 1)}) == 20
    assert harness.config_for("normal", None).freeze_lambda == 0.0
    assert harness.config_for("skewnormal", None).freeze_lambda is None
    with pytest.raises(DomainError):
        harness.config_for("t", None)
    with pytest.raises(DomainError):
        harness.replicate_table(9, 1, 0)


def test_replicate_ordering_and_determinism():
    cfg = McemConfig(r_init=15, r_max=20, burn_in=40, max_iter=2, restarts=1, warm_burn_in=10, m_step_draws=15)
    a = harness.replicate_table(1, 2, 5, ("skewnormal", "normal"), cfg)
    assert [(r.copula, r.index) for r in a] == [("skewnormal", 0), ("skewnormal", 1), ("normal", 0), ("normal", 1)]
    b = harness.run_replicate(1, 1, 5, "normal", cfg)
    assert b.estimates == a[3].estimates


def test_parse_grid():
    assert np.array_equal(harness.parse_grid("-1:1:5"), np.linspace(-1, 1, 5))
    for bad in ("1:2", "a:b:c", "2:1:5", "0:1:1", "0:inf:4"):
        with pytest.raises(DomainError):
            harness.parse_grid(bad)


@pytest.mark.parametrize("marginal", [MarginalSpec(), MarginalSpec("gamma", 3.0)], ids=["exp", "gamma3"])
def test_log_y_densities_normalized(marginal):
    ds, truth = gen_univariate(DesignSpec(m=20, seed=1, marginal=marginal))
    u = np.linspace(-14.0, 12.0, 2601)
    true = harness.true_logy_density(u, ds, truth.params)
    assert abs(integrate.trapezoid(true, u) - 1.0) <= 1e-6
    draws = np.random.default_rng(0).normal(0, 1, (30, ds.m))
    fitted = harness.fitted_logy_density(u, ds, truth.params, draws)
    assert abs(integrate.trapezoid(fitted, u) - 1.0) <= 1e-6
    # b draws from the prior make the two curves agree up to Monte Carlo error
    prior = np.random.default_rng(1).normal(0, math.sqrt(truth.params.omega_b), (400, ds.m))
    gap = np.max(np.abs(harness.fitted_logy_density(u, ds, truth.params, prior) - true))
    assert gap <= 0.02


def test_reference_times():
    ds, _ = gen_univariate(DesignSpec(m=4, seed=1))
    assert harness.reference_times(ds).tolist() == [1.0, 2.0, 3.0, 4.0, 5.0]
