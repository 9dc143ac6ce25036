import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from medpath.model import (
    Dataset,
    FACovariance,
    MediatorParams,
    OutcomeParams,
    check_pathway_consistency,
    fa_inverse_quadform,
    fa_inverse_quadform_rows,
    fa_logdensity,
    fa_logdensity_rows,
    mediator_residual,
    mediator_residuals,
    standardize_mediators,
)

from conftest import make_data


def _dense_case(seed, q):
    rng = np.random.default_rng(seed)
    lam = rng.normal(0, 1.5, q)
    sigma2 = float(rng.uniform(0.1, 3.0))
    v = rng.standard_normal(q)
    return FACovariance(lam, sigma2), v


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), q=st.integers(1, 50))
def test_quadform_and_logdet_match_dense_cholesky(seed, q):
    cov, v = _dense_case(seed, q)
    S = cov.dense()
    L = np.linalg.cholesky(S)
    z = np.linalg.solve(L, v)
    assert np.isclose(fa_inverse_quadform(cov, v), z @ z, rtol=1e-10, atol=0)
    assert np.isclose(cov.logdet, 2 * np.log(np.diag(L)).sum(), rtol=1e-10, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), q=st.integers(1, 20))
def test_logdensity_matches_scipy(seed, q):
    cov, v = _dense_case(seed, q)
    ref = stats.multivariate_normal(np.zeros(q), cov.dense()).logpdf(v)
    assert np.isclose(fa_logdensity(cov, v), ref, rtol=1e-9)


def test_row_versions_agree_with_single():
    cov, _ = _dense_case(3, 7)
    R = np.random.default_rng(1).standard_normal((5, 7))
    assert np.allclose(fa_inverse_quadform_rows(cov, R), [fa_inverse_quadform(cov, r) for r in R])
    assert np.allclose(fa_logdensity_rows(cov, R), [fa_logdensity(cov, r) for r in R])


def test_zero_loadings_reduce_to_independent_normals():
    q = 4
    cov = FACovariance(np.zeros(q), 0.7)
    v = np.array([0.1, -1.0, 2.0, 0.3])
    assert np.isclose(fa_logdensity(cov, v), stats.norm(0, np.sqrt(0.7)).logpdf(v).sum())
    assert np.allclose(cov.diag(), 0.7)


def test_fa_covariance_rejects_bad_inputs():
    with pytest.raises(ValueError):
        FACovariance(np.ones(3), 0.0)
    with pytest.raises(ValueError):
        FACovariance(np.array([1.0, np.nan]), 1.0)
    with pytest.raises(ValueError):
        fa_inverse_quadform(FACovariance(np.ones(3), 1.0), np.ones(2))
    with pytest.raises(ValueError):
        fa_logdensity(FACovariance(np.ones(2), 1.0), np.array([np.inf, 0.0]))


def test_dataset_validation_messages():
    n = 5
    X, A, M, Y = np.zeros((n, 1)), np.arange(n, dtype=float), np.ones((n, 2)), np.array([0, 1, 0, 1, 1.0])
    d = Dataset(X, A, M, Y)
    assert (d.n, d.p, d.q) == (5, 1, 2)
    assert d.mediator_names == ("M1", "M2")
    with pytest.raises(ValueError, match="row mismatch"):
        Dataset(X, A[:4], M, Y)
    with pytest.raises(ValueError, match="0/1"):
        Dataset(X, A, M, Y + 0.5)
    with pytest.raises(ValueError, match="non-finite"):
        Dataset(X, A, np.full((n, 2), np.nan), Y)
    with pytest.raises(ValueError, match="family"):
        Dataset(X, A, M, Y, family="poisson")
    g = Dataset(X, A, M, Y + 0.5, family="gaussian")
    assert not g.family.is_bernoulli
    empty = Dataset(np.zeros((n, 0)), A, M, Y)
    assert empty.p == 0


def test_residuals_single_and_batch_agree():
    data = make_data(n=30, q=4)
    rng = np.random.default_rng(2)
    gamma = np.array([1, 0, 1, 0], dtype=np.int8)
    params = MediatorParams(rng.standard_normal(4), rng.standard_normal((2, 4)),
                            rng.standard_normal(4) * gamma, gamma, rng.standard_normal(4), 1.3)
    R = mediator_residuals(data, params)
    for i in (0, 7, 29):
        assert np.allclose(R[i], mediator_residual(data, params, i))
    with pytest.raises(IndexError):
        mediator_residual(data, params, 30)


def test_parameter_invariants():
    with pytest.raises(ValueError, match="tau_j must be exactly zero"):
        MediatorParams(np.zeros(2), np.zeros((1, 2)), np.array([0.0, 1.0]), np.array([1, 0]),
                       np.zeros(2), 1.0)
    with pytest.raises(ValueError, match="delta_j must be exactly zero"):
        OutcomeParams(0.0, np.array([1.0, 0.0]), np.zeros(1), 0.0, np.array([0, 0]))
    med = MediatorParams(np.zeros(2), np.zeros((1, 2)), np.zeros(2), np.array([1, 0]), np.zeros(2), 1.0)
    out = OutcomeParams(0.0, np.array([0.0, 0.5]), np.zeros(1), 0.0, np.array([0, 1]))
    with pytest.raises(ValueError, match=r"mediators \[1\]"):
        check_pathway_consistency(med, out)


def test_standardize_keeps_indirect_effect_products():
    data = make_data(n=50, q=3)
    sd, center, scale = standardize_mediators(data)
    assert np.allclose(sd.M.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(sd.M.std(axis=0), 1)
    # tau scales by 1/s, delta by s: the product is unchanged
    tau, delta = np.array([0.3, -0.2, 0.1]), np.array([1.0, 2.0, -1.0])
    assert np.allclose((tau / scale) * (delta * scale), tau * delta)
