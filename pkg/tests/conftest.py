import numpy as np
import pytest

from medpath.glm import Family
from medpath.model import Dataset
from medpath.priors import MrfGraph, PriorConfig


def make_data(n=80, q=6, p=2, family="logit", seed=0, signal=True):
    """Small dataset with a couple of true pathways."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    A = X.sum(axis=1) * 0.3 + rng.standard_normal(n)
    tau = np.zeros(q)
    delta = np.zeros(q)
    if signal:
        tau[:2] = [0.8, -0.6]
        delta[:2] = [1.2, 1.0]
    u = rng.standard_normal(n)
    M = 0.1 + np.outer(A, tau) + 0.1 * X.sum(axis=1, keepdims=True) + 0.4 * u[:, None] \
        + rng.standard_normal((n, q))
    eta = -0.3 + M @ delta + 0.5 * A
    fam = Family.parse(family)
    if fam is Family.GAUSSIAN:
        Y = eta + rng.standard_normal(n)
    elif fam is Family.PROBIT:
        Y = (eta + rng.standard_normal(n) > 0).astype(float)
    else:
        Y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return Dataset(X, A, M, Y, family=fam)


@pytest.fixture
def small_data():
    return make_data()


@pytest.fixture
def small_priors(small_data):
    graph = MrfGraph.from_mediators(small_data.M, rho_cut=0.1)
    return PriorConfig.default(small_data.q, small_data.p, graph, eta2_gamma=0.5)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for num in sorted(results):
            terminalreporter.write_line(results[num])
