"""Data and parameter containers plus single-factor covariance algebra.

The mediator residual covariance is ``sigma2 * (lam lam^T + I)``.  Nothing in
the hot path builds that q x q matrix; quadratic forms and determinants go
through the rank-one Woodbury / determinant lemma instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .glm import Family

_LOG_2PI = np.log(2.0 * np.pi)


def _as_float_array(x, ndim, name):
    arr = np.ascontiguousarray(np.asarray(x, dtype=float))
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Dataset:
    """Observed covariates ``X`` (n x p), exposure ``A``, mediators ``M`` (n x q), outcome ``Y``."""

    X: np.ndarray
    A: np.ndarray
    M: np.ndarray
    Y: np.ndarray
    family: Family = Family.LOGIT
    mediator_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        A = _as_float_array(self.A, 1, "A")
        n = A.shape[0]
        X = np.asarray(self.X, dtype=float)
        if X.size == 0:
            X = np.zeros((n, 0))
        X = _as_float_array(X, 2, "X")
        M = _as_float_array(self.M, 2, "M")
        Y = _as_float_array(self.Y, 1, "Y")
        family = Family.parse(self.family)
        if n < 1:
            raise ValueError("need at least one observation")
        if X.shape[0] != n or M.shape[0] != n or Y.shape[0] != n:
            raise ValueError(
                f"row mismatch: X {X.shape}, A {A.shape}, M {M.shape}, Y {Y.shape}"
            )
        if M.shape[1] < 1:
            raise ValueError("need at least one mediator")
        for name, arr in (("X", X), ("A", A), ("M", M), ("Y", Y)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains missing or non-finite values")
        if family.is_bernoulli and not np.all((Y == 0) | (Y == 1)):
            raise ValueError("Bernoulli outcome must be coded 0/1")
        names = self.mediator_names
        if names is None:
            names = [f"M{j + 1}" for j in range(M.shape[1])]
        names = tuple(str(s) for s in names)
        if len(names) != M.shape[1]:
            raise ValueError("mediator_names length does not match M columns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "mediator_names", names)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.M.shape[1]

    def with_family(self, family) -> "Dataset":
        return Dataset(self.X, self.A, self.M, self.Y, Family.parse(family), self.mediator_names)


def standardize_mediators(data: Dataset):
    """Centre and scale every mediator column to unit variance.

    Returns the new dataset plus the column means and standard deviations.
    Indirect effects ``tau_j * delta_j`` are invariant to this rescaling.
    """
    center = data.M.mean(axis=0)
    scale = data.M.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    M = (data.M - center) / scale
    return Dataset(data.X, data.A, M, data.Y, data.family, data.mediator_names), center, scale


@dataclass(frozen=True)
class MediatorParams:
    beta0: np.ndarray
    B: np.ndarray
    tau: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    sigma2: float

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        gamma = np.asarray(self.gamma, dtype=np.int8)
        q = tau.shape[0]
        if gamma.shape != (q,) or np.shape(self.beta0) != (q,) or np.shape(self.lam) != (q,):
            raise ValueError("mediator parameter vectors must all have length q")
        if np.ndim(self.B) != 2 or np.shape(self.B)[1] != q:
            raise ValueError("B must be p x q")
        if not np.all((gamma == 0) | (gamma == 1)):
            raise ValueError("gamma must be binary")
        if np.any((gamma == 0) & (tau != 0)):
            raise ValueError("tau_j must be exactly zero where gamma_j = 0")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta0", np.asarray(self.beta0, dtype=float))
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float))
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float))

    @property
    def cov(self) -> "FACovariance":
        return FACovariance(self.lam, self.sigma2)


@dataclass(frozen=True)
class OutcomeParams:
    alpha0: float
    delta: np.ndarray
    alpha: np.ndarray
    alpha_a: float
    omega: np.ndarray

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=float)
        omega = np.asarray(self.omega, dtype=np.int8)
        if omega.shape != delta.shape:
            raise ValueError("omega and delta must have the same length")
        if not np.all((omega == 0) | (omega == 1)):
            raise ValueError("omega must be binary")
        if np.any((omega == 0) & (delta != 0)):
            raise ValueError("delta_j must be exactly zero where omega_j = 0")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))


def check_pathway_consistency(mediator: MediatorParams, outcome: OutcomeParams) -> None:
    """Reject a parameter pair that breaks the subsetting rule ``omega <= gamma``."""
    if mediator.gamma.shape != outcome.omega.shape:
        raise ValueError("gamma and omega lengths differ")
    if np.any(outcome.omega > mediator.gamma):
        bad = np.flatnonzero(outcome.omega > mediator.gamma)
        raise ValueError(f"omega_j = 1 with gamma_j = 0 at mediators {bad.tolist()}")


@dataclass(frozen=True)
class FACovariance:
    """``sigma2 * (lam lam^T + I_q)`` with cached ``lam^T lam`` and log-determinant."""

    lam: np.ndarray
    sigma2: float
    s: float = field(init=False)
    logdet: float = field(init=False)

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        if lam.ndim != 1:
            raise ValueError("lam must be a vector")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise ValueError("sigma2 must be positive and finite")
        if not np.all(np.isfinite(lam)):
            raise ValueError("lam must be finite")
        s = float(lam @ lam)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "logdet", lam.shape[0] * np.log(self.sigma2) + np.log1p(s))

    @property
    def q(self) -> int:
        return self.lam.shape[0]

    def diag(self) -> np.ndarray:
        """Marginal variances ``Sigma_jj = sigma2 * (lam_j^2 + 1)``."""
        return self.sigma2 * (self.lam**2 + 1.0)

    def dense(self) -> np.ndarray:
        """Materialise Sigma.  For checks and data generation only."""
        return self.sigma2 * (np.outer(self.lam, self.lam) + np.eye(self.q))


def fa_inverse_quadform(cov: FACovariance, v) -> float:
    """``v^T Sigma^{-1} v`` in O(q)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (cov.q,):
        raise ValueError(f"expected vector of length {cov.q}, got shape {v.shape}")
    lv = cov.lam @ v
    return float((v @ v - lv * lv / (1.0 + cov.s)) / cov.sigma2)


def fa_inverse_quadform_rows(cov: FACovariance, R) -> np.ndarray:
    """Row-wise ``r_i^T Sigma^{-1} r_i`` for an n x q residual matrix."""
    R = np.asarray(R, dtype=float)
    lv = R @ cov.lam
    return (np.einsum("ij,ij->i", R, R) - lv * lv / (1.0 + cov.s)) / cov.sigma2


def fa_logdensity(cov: FACovariance, residual) -> float:
    residual = np.asarray(residual, dtype=float)
    if not np.all(np.isfinite(residual)):
        raise ValueError("residual has non-finite entries")
    quad = fa_inverse_quadform(cov, residual)
    return float(-0.5 * cov.q * _LOG_2PI - 0.5 * cov.logdet - 0.5 * quad)


def fa_logdensity_rows(cov: FACovariance, R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if not np.all(np.isfinite(R)):
        raise ValueError("residual has non-finite entries")
    return -0.5 * cov.q * _LOG_2PI - 0.5 * cov.logdet - 0.5 * fa_inverse_quadform_rows(cov, R)


def mediator_residual(data: Dataset, params: MediatorParams, i: int) -> np.ndarray:
    """``M_i - beta0 - tau * A_i - B^T X_i``."""
    if not 0 <= i < data.n:
        raise IndexError(f"observation index {i} out of range for n={data.n}")
    r = data.M[i] - params.beta0 - params.tau * data.A[i]
    if data.p:
        r = r - params.B.T @ data.X[i]
    return r


def mediator_residuals(data: Dataset, params: MediatorParams) -> np.ndarray:
    """All n residual rows at once."""
    R = data.M - params.beta0 - np.outer(data.A, params.tau)
    if data.p:
        R = R - data.X @ params.B
    return R
