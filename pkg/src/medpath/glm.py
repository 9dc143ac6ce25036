"""Outcome families for the GLM outcome model.

Only this module knows how a linear predictor turns into a likelihood, so a
new exponential-family outcome needs a new ``Family`` member plus the three
elementwise functions below.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_ndtr

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class Family(str, enum.Enum):
    LOGIT = "bernoulli-logit"
    PROBIT = "bernoulli-probit"
    GAUSSIAN = "gaussian-identity"

    @classmethod
    def parse(cls, value: "str | Family") -> "Family":
        if isinstance(value, Family):
            return value
        aliases = {"logit": cls.LOGIT, "probit": cls.PROBIT, "gaussian": cls.GAUSSIAN}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(
            f"unknown outcome family {value!r}; expected one of logit, probit, gaussian"
        )

    @property
    def code(self) -> int:
        # integer tag shared with the compiled kernels
        return {Family.LOGIT: 0, Family.PROBIT: 1, Family.GAUSSIAN: 2}[self]

    @property
    def is_bernoulli(self) -> bool:
        return self is not Family.GAUSSIAN


@dataclass(frozen=True)
class OutcomeFamily:
    """Outcome family plus, for the Gaussian case, a fixed residual variance."""

    kind: Family = Family.LOGIT
    noise_var: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Family.parse(self.kind))
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")

    @classmethod
    def of(cls, value: "str | Family | OutcomeFamily", noise_var: float = 1.0) -> "OutcomeFamily":
        if isinstance(value, OutcomeFamily):
            return value
        return cls(Family.parse(value), noise_var)


def linear_predictor(alpha0, delta, alpha, alpha_a, M, X, A) -> np.ndarray:
    """``alpha0 + M @ delta + X @ alpha + alpha_a * A``."""
    eta = alpha0 + M @ delta + alpha_a * A
    if X.shape[1]:
        eta = eta + X @ alpha
    return eta


def _check(y, eta):
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if y.shape != eta.shape:
        raise ValueError(f"length mismatch: y {y.shape} vs eta {eta.shape}")
    if not np.all(np.isfinite(eta)):
        raise ValueError("linear predictor has non-finite entries")
    return y, eta


def log1pexp(x):
    """Stable ``log(1 + exp(x))``."""
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def _log_norm_pdf(x):
    return -0.5 * x * x - _LOG_SQRT_2PI


def loglik_terms(family: OutcomeFamily, y, eta) -> np.ndarray:
    """Per-observation log-likelihood contributions."""
    family = OutcomeFamily.of(family)
    y, eta = _check(y, eta)
    kind = family.kind
    if kind is Family.LOGIT:
        return y * eta - log1pexp(eta)
    if kind is Family.PROBIT:
        return np.where(y > 0.5, log_ndtr(eta), log_ndtr(-eta))
    s2 = family.noise_var
    r = y - eta
    return -0.5 * r * r / s2 - 0.5 * np.log(2.0 * np.pi * s2)


def loglik(family: OutcomeFamily, y, eta) -> float:
    return float(np.sum(loglik_terms(family, y, eta)))


def loglik_grad(family: OutcomeFamily, y, eta) -> np.ndarray:
    """Derivative of the log-likelihood with respect to each ``eta_i``.

    The probit case is evaluated as ``y * phi/Phi(eta) - (1 - y) * phi/Phi(-eta)``
    through ``log_ndtr``, whose asymptotic tail expansion keeps the inverse
    Mills ratio finite far beyond ``|eta| = 37`` where ``Phi`` underflows.
    """
    family = OutcomeFamily.of(family)
    y, eta = _check(y, eta)
    kind = family.kind
    if kind is Family.LOGIT:
        return y - expit(eta)
    if kind is Family.PROBIT:
        lpdf = _log_norm_pdf(eta)
        up = np.exp(lpdf - log_ndtr(eta))
        down = np.exp(lpdf - log_ndtr(-eta))
        return np.where(y > 0.5, up, -down)
    return (y - eta) / family.noise_var


def fisher_weight(family: OutcomeFamily, eta) -> np.ndarray:
    """Expected information per observation, ``-E[d2 loglik / d eta2]``."""
    family = OutcomeFamily.of(family)
    eta = np.asarray(eta, dtype=float)
    kind = family.kind
    if kind is Family.LOGIT:
        p = expit(eta)
        return p * (1.0 - p)
    if kind is Family.PROBIT:
        return np.exp(2.0 * _log_norm_pdf(eta) - log_ndtr(eta) - log_ndtr(-eta))
    return np.full_like(eta, 1.0 / family.noise_var)


def sample_outcome(family: OutcomeFamily, eta, rng: np.random.Generator) -> np.ndarray:
    """Draw outcomes from the family at linear predictor ``eta``."""
    family = OutcomeFamily.of(family)
    eta = np.asarray(eta, dtype=float)
    kind = family.kind
    if kind is Family.LOGIT:
        return (rng.random(eta.shape) < expit(eta)).astype(float)
    if kind is Family.PROBIT:
        return (eta + rng.standard_normal(eta.shape) > 0).astype(float)
    return eta + np.sqrt(family.noise_var) * rng.standard_normal(eta.shape)
