import copy

import numpy as np
import pytest
from scipy import integrate, stats

from medpath import glm, kernels
from medpath.glm import OutcomeFamily
from medpath.sampler import (McmcConfig, initial_state, mcmc_step, refresh_eta, update_gamma_tau,
                             update_omega_delta, update_outcome_coeffs)

from conftest import make_data

BACKENDS = sorted(kernels.implementations())
needs_both = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")


def test_backend_selection_reports_name():
    assert kernels.IMPLEMENTATION in ("cython", "python")
    assert "python" in kernels.implementations()


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("family", ["logit", "probit", "gaussian"])
def test_cache_matches_glm_functions(backend, family):
    impl = kernels.implementations()[backend]
    fam = OutcomeFamily(family, 0.6)
    rng = np.random.default_rng(0)
    eta = rng.normal(0, 4, 300)
    y = glm.sample_outcome(fam, eta, rng)
    cache = np.zeros((3, 300))
    impl.fill_cache(fam.kind.code, y, eta, 0.6, cache)
    ll = glm.loglik_terms(fam, y, eta)
    if family == "gaussian":
        ll = ll + 0.5 * np.log(2 * np.pi * 0.6)  # kernels drop the constant
    assert np.allclose(cache[0], ll, rtol=1e-12, atol=1e-12)
    assert np.allclose(cache[1], glm.loglik_grad(fam, y, eta), rtol=1e-12, atol=1e-14)
    assert np.allclose(cache[2], glm.fisher_weight(fam, eta), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("backend", BACKENDS)
def test_delta_proposal_is_one_newton_step(backend):
    impl = kernels.implementations()[backend]
    fam = OutcomeFamily("logit")
    rng = np.random.default_rng(1)
    n = 200
    x = rng.standard_normal(n)
    eta = rng.normal(0, 1, n)
    y = glm.sample_outcome(fam, eta + 0.7 * x, rng)
    scratch = np.zeros((3, n))
    m, s = impl.delta_proposal(0, y, eta, x, 0.3, 2.0, 1.0, scratch)
    e = eta + 0.3 * x
    g = x @ glm.loglik_grad(fam, y, e)
    h = (x * x) @ glm.fisher_weight(fam, e)
    prec = h + 1 / 2.0
    assert np.isclose(m, g / prec)
    assert np.isclose(s, 1.25 / np.sqrt(prec))


def _prepared_state(family="logit", seed=0, warm=15):
    data = make_data(n=120, q=8, family=family, seed=seed)
    from medpath.priors import MrfGraph, PriorConfig

    priors = PriorConfig.default(data.q, data.p, MrfGraph.from_mediators(data.M, 0.05),
                                 eta2_gamma=0.8, pi_omega=0.4, eta1_gamma=-1.0)
    cfg = McmcConfig(n_iter=100, backend="python")
    state = initial_state(data, priors, cfg, np.random.default_rng(seed))
    for _ in range(warm):
        mcmc_step(state, data, priors, cfg)
    return data, priors, cfg, state


def _same_state(a, b, tol=1e-9):
    assert np.array_equal(a.gamma, b.gamma)
    assert np.array_equal(a.omega, b.omega)
    for name in ("tau", "delta", "eta", "alpha_full", "delta_scale", "alpha_scale"):
        assert np.allclose(getattr(a, name), getattr(b, name), rtol=tol, atol=tol), name
    assert np.allclose(a.cache, b.cache, rtol=tol, atol=tol)


@needs_both
@pytest.mark.parametrize("family", ["logit", "probit", "gaussian"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_compiled_and_python_sweeps_agree(family, seed):
    data, priors, cfg, state = _prepared_state(family, seed)
    for update in (update_gamma_tau, update_omega_delta):
        s_c, s_p = copy.deepcopy(state), copy.deepcopy(state)
        update(s_c, data, priors, backend="cython")
        update(s_p, data, priors, backend="python")
        _same_state(s_c, s_p)
        assert all(np.array_equal(s_c.counts[k], s_p.counts[k]) for k in s_c.counts)
    s_c, s_p = copy.deepcopy(state), copy.deepcopy(state)
    cfg0 = McmcConfig(refine_every=0)
    update_outcome_coeffs(s_c, data, priors, cfg0, backend="cython")
    update_outcome_coeffs(s_p, data, priors, cfg0, backend="python")
    _same_state(s_c, s_p)


@needs_both
def test_full_chains_agree_across_backends():
    data, priors, _, _ = _prepared_state("logit", 4, warm=0)
    from medpath.sampler import run_chain

    a = run_chain(data, priors, McmcConfig(n_iter=200, backend="cython", seed=9))
    b = run_chain(data, priors, McmcConfig(n_iter=200, backend="python", seed=9))
    assert np.array_equal(a.draws["gamma"], b.draws["gamma"])
    assert np.allclose(a.draws["delta"], b.draws["delta"], atol=1e-8)


@pytest.mark.parametrize("backend", BACKENDS)
def test_sweeps_keep_eta_and_cache_consistent(backend):
    data, priors, cfg, state = _prepared_state("probit", 3)
    for _ in range(5):
        update_gamma_tau(state, data, priors, backend=backend)
        update_omega_delta(state, data, priors, backend=backend)
        eta, cache = state.eta.copy(), state.cache.copy()
        refresh_eta(state, data, backend)
        assert np.allclose(eta, state.eta, atol=1e-10)
        assert np.allclose(cache, state.cache, atol=1e-9)
        assert np.all(state.omega <= state.gamma)
        assert np.all(state.tau[state.gamma == 0] == 0)
        assert np.all(state.delta[state.omega == 0] == 0)


# ---------------------------------------------------------------------------
# single-coordinate stationarity against quadrature


def _one_mediator_problem(seed=0, n=40):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    base = rng.normal(-0.2, 0.5, n)
    y = (rng.random(n) < 1 / (1 + np.exp(-(base + 0.8 * x)))).astype(float)
    return x, base, y


def _post_moments(x, base, y, prior_var):
    fam = OutcomeFamily("logit")

    def dens(d):
        return np.exp(glm.loglik(fam, y, base + d * x) - 0.5 * d * d / prior_var
                      - glm.loglik(fam, y, base))

    lo, hi = -8, 8
    z = integrate.quad(dens, lo, hi, limit=200)[0]
    m1 = integrate.quad(lambda d: d * dens(d), lo, hi, limit=200)[0] / z
    m2 = integrate.quad(lambda d: d * d * dens(d), lo, hi, limit=200)[0] / z
    return z, m1, m2 - m1 * m1


def _mc_check(draws, mean, var, n_eff):
    se = np.sqrt(var / n_eff)
    assert abs(draws.mean() - mean) < 5 * se


@pytest.mark.parametrize("backend", BACKENDS)
def test_random_walk_coordinate_targets_posterior(backend):
    impl = kernels.implementations()[backend]
    x, base, y = _one_mediator_problem(1)
    n = x.size
    _, m, v = _post_moments(x, base, y, 2.0)
    coef = np.zeros(1)
    eta = base.copy()
    cache, scratch = np.zeros((3, n)), np.zeros((3, n))
    impl.fill_cache(0, y, eta, 1.0, cache)
    rng = np.random.default_rng(2)
    Zt = np.ascontiguousarray(x[None, :])
    out = np.empty(20000)
    acc = np.zeros(1, dtype=np.int8)
    for t in range(out.size):
        impl.coord_rw_sweep(coef, Zt, eta, y, 0, 1.0, cache, scratch, np.array([2.0]),
                            np.array([1.5 * np.sqrt(v)]), rng.random(1), rng.standard_normal(1), acc)
        out[t] = coef[0]
    _mc_check(out[1000:], m, v, 19000 / 10)
    assert abs(out[1000:].var() / v - 1) < 0.15


@pytest.mark.parametrize("backend", BACKENDS)
def test_omega_birth_death_targets_posterior_inclusion(backend):
    impl = kernels.implementations()[backend]
    x, base, y = _one_mediator_problem(3)
    n = x.size
    pi, psi2 = 0.4, 1.0
    z, m, v = _post_moments(x, base, y, psi2)
    # marginal likelihood ratio of omega = 1 vs 0 (prior normaliser over delta)
    bf = z / np.sqrt(2 * np.pi * psi2)
    p_on = pi * bf / (pi * bf + 1 - pi)
    gamma = np.ones(1, dtype=np.int8)
    omega = np.zeros(1, dtype=np.int8)
    delta = np.zeros(1)
    eta = base.copy()
    cache, scratch = np.zeros((3, n)), np.zeros((3, n))
    impl.fill_cache(0, y, eta, 1.0, cache)
    Mt = np.ascontiguousarray(x[None, :])
    rng = np.random.default_rng(4)
    order = np.zeros(1, dtype=np.int64)
    counts = np.zeros(4, dtype=np.int64)
    rw = np.zeros(1, dtype=np.int8)
    T = 40000
    on = np.empty(T, dtype=bool)
    ds = []
    for t in range(T):
        impl.omega_delta_sweep(order, gamma, omega, delta, eta, pi, np.array([psi2]), Mt, y, 0, 1.0,
                               cache, scratch, np.array([2.0 * np.sqrt(v)]), rng.random((1, 3)),
                               rng.standard_normal((1, 2)), counts, rw)
        on[t] = omega[0] == 1
        if on[t]:
            ds.append(delta[0])
    frac = on[2000:].mean()
    # indicator autocorrelation is mild here; allow an effective size of T/20
    assert abs(frac - p_on) < 5 * np.sqrt(p_on * (1 - p_on) / (T / 20))
    _mc_check(np.array(ds), m, v, len(ds) / 10)
    assert np.allclose(eta, base + delta[0] * x)
    assert counts[1] > 0 and counts[3] > 0


@pytest.mark.parametrize("backend", BACKENDS)
def test_mixture_log_density_normalises(backend):
    impl = kernels.implementations()[backend]
    val = integrate.quad(lambda d: np.exp(impl.mix_logq(d, 0.7, 0.3, 2.0)), -20, 20, points=[0.7])[0]
    assert np.isclose(val, 1.0, atol=1e-8)
