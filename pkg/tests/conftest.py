import numpy as np
import pytest

from skewglmm.data import ModelParams, Unit
from skewglmm.marginals import MarginalSpec

# (criterion, PASS/FAIL, detail) lines collected by the acceptance suite
ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def record_criterion():
    def record(name: str, ok: bool, detail: str):
        ACCEPTANCE.append((name, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def make_unit(n=3, times=None, beta=(0.0,), seed=0, y=None):
    times = np.arange(1.0, n + 1.0) if times is None else np.asarray(times, dtype=float)
    X = np.ones((times.size, len(beta)))
    if len(beta) > 1:
        X[:, 1:] = np.random.default_rng(seed).normal(size=(times.size, len(beta) - 1))
    y = np.random.default_rng(seed + 1).exponential(size=times.size) if y is None else np.asarray(y, dtype=float)
    return Unit("u", times, y, X)


def make_params(beta=(0.0,), omega=1.0, xi=0.2, lam=1.0, family="exponential", shape=1.0):
    return ModelParams(np.array(beta, dtype=float), omega, xi, lam, MarginalSpec(family, shape))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
