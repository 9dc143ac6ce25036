"""MCMC engine for the joint mediator / GLM-outcome model.

One iteration runs, in order:

1. Gibbs updates of the mediator model through the latent factor scores
   ``u_i`` (``M_i = beta0 + tau A_i + B^T X_i + lam u_i + e_i``), which makes
   ``beta0, B, lam, sigma2`` and the active ``tau_j`` conditionally conjugate.
2. A randomly ordered sweep of transdimensional moves on ``(gamma_j, tau_j)``,
   including joint ``(gamma_j, omega_j)`` birth/death so the subsetting
   constraint ``omega <= gamma`` is never violated.
3. A sweep of birth/death plus random-walk moves on ``(omega_j, delta_j)``
   for mediators with ``gamma_j = 1``.
4. Coordinate random-walk Metropolis on ``(alpha0, alpha, alpha_a)`` and,
   every ``refine_every`` iterations, one HMC trajectory over the whole
   nonzero outcome block.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import linalg

from . import glm, kernels
from .glm import OutcomeFamily
from .model import (
    Dataset,
    FACovariance,
    MediatorParams,
    OutcomeParams,
)
from .priors import PriorConfig

_LOG_2PI = math.log(2.0 * math.pi)


class SamplerError(RuntimeError):
    """Numerical failure inside an MCMC update."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class McmcConfig:
    n_iter: int = 10_000
    burn_in: float = 0.5
    thin: int = 1
    refine_every: int = 10
    leapfrog_steps: int = 10
    step_size: float = 0.1
    target_accept: float = 0.65
    rw_target: float = 0.44
    seed: int = 0
    n_chains: int = 1
    fix_lambda_zero: bool = False
    noise_var: float = 1.0
    backend: str = "auto"
    check_invariants: bool = False
    divergence_threshold: float = 1000.0

    def __post_init__(self):
        if self.n_iter <= 0:
            raise ValueError("n_iter must be positive")
        if not 0.0 < self.burn_in < 1.0:
            raise ValueError("burn_in must lie strictly between 0 and 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be >= 1")
        if self.refine_every < 0:
            raise ValueError("refine_every must be >= 0 (0 disables HMC)")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.backend not in ("auto", "cython", "python"):
            raise ValueError("backend must be auto, cython or python")

    @property
    def n_burn(self) -> int:
        return int(round(self.n_iter * self.burn_in))

    @property
    def n_draws(self) -> int:
        return -(-(self.n_iter - self.n_burn) // self.thin)

    def to_dict(self) -> dict:
        return asdict(self)


def _backend(name: str):
    impls = kernels.implementations()
    if name == "auto":
        return impls.get("cython", impls["python"])
    if name not in impls:
        raise ValueError(f"kernel backend {name!r} is not available (built: {sorted(impls)})")
    return impls[name]


class Workspace:
    """Data products reused by every iteration."""

    def __init__(self, data: Dataset, noise_var: float = 1.0):
        self.data = data
        n, p = data.n, data.p
        self.X1 = np.hstack([np.ones((n, 1)), data.X])
        self.X1tX1 = self.X1.T @ self.X1
        self.Mt = np.ascontiguousarray(data.M.T)
        self.AtM = data.A @ data.M
        self.AtX1 = data.A @ self.X1
        self.X1tM = self.X1.T @ data.M
        self.ata = float(data.A @ data.A)
        self.Zt = np.ascontiguousarray(np.vstack([np.ones(n), data.X.T, data.A]))
        self.y = np.ascontiguousarray(data.Y)
        self.family = OutcomeFamily(data.family, noise_var)
        self.fam = self.family.kind.code
        self.nv = float(noise_var)
        self.z_sumsq = np.sum(self.Zt**2, axis=1)
        self.m_sumsq = np.sum(data.M**2, axis=0)
        self.w0 = float(glm.fisher_weight(self.family, np.zeros(1))[0])


class DualAveraging:
    """Step-size adaptation of Hoffman & Gelman (2014, Alg. 5)."""

    def __init__(self, step0: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step0)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.t = 0
        self.hbar = 0.0
        self.log_step = math.log(step0)
        self.log_step_bar = 0.0

    def update(self, accept_prob: float) -> float:
        self.t += 1
        w = 1.0 / (self.t + self.t0)
        self.hbar = (1.0 - w) * self.hbar + w * (self.target - accept_prob)
        self.log_step = self.mu - math.sqrt(self.t) / self.gamma * self.hbar
        k = self.t ** (-self.kappa)
        self.log_step_bar = k * self.log_step + (1.0 - k) * self.log_step_bar
        return math.exp(self.log_step)

    @property
    def final(self) -> float:
        return math.exp(self.log_step_bar) if self.t else math.exp(self.log_step)


@dataclass
class ModelState:
    """Current parameter values plus the chain's RNG and adaptation state.

    Updates mutate the arrays in place; ``mediator`` and ``outcome`` return
    immutable snapshots.
    """

    beta0: np.ndarray
    B: np.ndarray
    tau: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    sigma2: float
    alpha_full: np.ndarray  # (alpha0, alpha_1..alpha_p, alpha_a)
    delta: np.ndarray
    omega: np.ndarray
    u: np.ndarray
    eta: np.ndarray
    rng: np.random.Generator
    iteration: int = 0
    alpha_scale: Optional[np.ndarray] = None
    delta_scale: Optional[np.ndarray] = None
    step_size: float = 0.1
    dual: Optional[DualAveraging] = None
    adapting: bool = False
    counts: dict = field(default_factory=dict)
    ws: Optional[Workspace] = None
    # per-observation (loglik, score, weight) at eta, plus a candidate buffer
    cache: Optional[np.ndarray] = None
    scratch: Optional[np.ndarray] = None

    @property
    def q(self) -> int:
        return self.tau.shape[0]

    @property
    def alpha0(self) -> float:
        return float(self.alpha_full[0])

    @property
    def alpha(self) -> np.ndarray:
        return self.alpha_full[1:-1]

    @property
    def alpha_a(self) -> float:
        return float(self.alpha_full[-1])

    @property
    def mediator(self) -> MediatorParams:
        return MediatorParams(self.beta0.copy(), self.B.copy(), self.tau.copy(),
                              self.gamma.copy(), self.lam.copy(), self.sigma2)

    @property
    def outcome(self) -> OutcomeParams:
        return OutcomeParams(self.alpha0, self.delta.copy(), self.alpha.copy(),
                             self.alpha_a, self.omega.copy())

    def check(self) -> None:
        if np.any(self.omega > self.gamma):
            raise SamplerError("omega_j = 1 with gamma_j = 0", self.iteration)
        if np.any((self.gamma == 0) & (self.tau != 0)):
            raise SamplerError("nonzero tau under gamma = 0", self.iteration)
        if np.any((self.omega == 0) & (self.delta != 0)):
            raise SamplerError("nonzero delta under omega = 0", self.iteration)
        if not self.sigma2 > 0:
            raise SamplerError("sigma2 not positive", self.iteration)


def _new_counts(q, p):
    return {
        "gamma": np.zeros(8, dtype=np.int64),
        "omega": np.zeros(4, dtype=np.int64),
        "delta_rw": np.zeros(2, dtype=np.int64),
        "alpha_rw": np.zeros(2, dtype=np.int64),
        "lambda_mh": np.zeros(2, dtype=np.int64),
        "hmc": np.zeros(2, dtype=np.int64),
        "divergences": np.zeros(1, dtype=np.int64),
    }


def initial_state(data: Dataset, priors: PriorConfig, cfg: McmcConfig,
                  rng: np.random.Generator) -> ModelState:
    """Sparse start: no active pathways, zero coefficients, ``lam = 0.1``."""
    n, p, q = data.n, data.p, data.q
    ws = Workspace(data, cfg.noise_var)
    lam = np.zeros(q) if cfg.fix_lambda_zero else np.full(q, 0.1)
    # conditional standard deviations at eta = 0, scaled for single-coordinate RW
    alpha_scale = 2.4 / np.sqrt(ws.w0 * ws.z_sumsq + 1.0 / priors.sigma_alpha)
    delta_scale = 2.4 / np.sqrt(ws.w0 * ws.m_sumsq + 1.0 / priors.psi2)
    return ModelState(
        beta0=np.zeros(q),
        B=np.zeros((p, q)),
        tau=np.zeros(q),
        gamma=np.zeros(q, dtype=np.int8),
        lam=lam,
        sigma2=float(priors.sigma02),
        alpha_full=np.zeros(p + 2),
        delta=np.zeros(q),
        omega=np.zeros(q, dtype=np.int8),
        u=np.zeros(n),
        eta=np.zeros(n),
        rng=rng,
        alpha_scale=alpha_scale,
        delta_scale=delta_scale,
        step_size=cfg.step_size,
        dual=DualAveraging(cfg.step_size, cfg.target_accept),
        counts=_new_counts(q, p),
        ws=ws,
        cache=np.zeros((3, n)),
        scratch=np.zeros((3, n)),
    )


def _ws(state: ModelState, data: Dataset, cfg: Optional[McmcConfig] = None) -> Workspace:
    nv = cfg.noise_var if cfg is not None else (state.ws.nv if state.ws is not None else 1.0)
    if state.ws is None or state.ws.data is not data or state.ws.nv != nv:
        state.ws = Workspace(data, nv)
    return state.ws


def refresh_eta(state: ModelState, data: Dataset, backend: str = "auto") -> np.ndarray:
    """Recompute the outcome linear predictor and its per-observation cache.

    Call after changing outcome coefficients outside the kernel sweeps.
    """
    ws = _ws(state, data)
    eta = state.alpha_full @ ws.Zt
    act = np.flatnonzero(state.omega)
    if act.size:
        eta = eta + state.delta[act] @ ws.Mt[act]
    state.eta = np.ascontiguousarray(eta)
    n = data.n
    if state.cache is None or state.cache.shape != (3, n):
        state.cache, state.scratch = np.zeros((3, n)), np.zeros((3, n))
    _backend(backend).fill_cache(ws.fam, ws.y, state.eta, ws.nv, state.cache)
    return state.eta


# ----------------------------------------------------------------------------
# mediator block


def beta_conditional(state: ModelState, data: Dataset, priors: PriorConfig):
    """Gaussian full conditional of ``(beta0_j, B_j)`` for every mediator.

    Returns the (p+1) x q matrix of means and the lower Cholesky factor of the
    shared precision matrix.
    """
    ws = _ws(state, data)
    prec = ws.X1tX1 / state.sigma2 + np.diag(1.0 / priors.sigma_beta)
    try:
        chol = linalg.cholesky(prec, lower=True)
    except linalg.LinAlgError as exc:
        raise SamplerError(f"Cholesky of beta precision failed: {exc}", state.iteration)
    # X1^T (M - A tau^T - u lam^T) from cached cross products
    rhs = (ws.X1tM - np.outer(ws.AtX1, state.tau) - np.outer(ws.X1.T @ state.u, state.lam)) / state.sigma2
    mean = linalg.cho_solve((chol, True), rhs)
    return mean, chol


def tau_conditional(state: ModelState, data: Dataset, priors: PriorConfig):
    """Mean and variance of ``tau_j`` given ``gamma_j = 1`` and everything else."""
    ws = _ws(state, data)
    a_resid = a_residual(state, ws)
    slab_var = priors.nu2 * state.sigma2 * (1.0 + state.lam**2)
    prec = ws.ata / state.sigma2 + 1.0 / slab_var
    return (a_resid / state.sigma2) / prec, 1.0 / prec


def a_residual(state: ModelState, ws: Workspace) -> np.ndarray:
    """``A^T (M_j - beta0_j - X B_j - lam_j u)`` for every j."""
    coef = np.vstack([state.beta0[None, :], state.B])
    return ws.AtM - ws.AtX1 @ coef - state.lam * float(ws.data.A @ state.u)


def _residual_sumsq(ws: Workspace, coef, tau, lam, u, Mtu):
    """``sum_ij (M - X1 coef - A tau^T - u lam^T)_ij^2`` without forming the n x q residual."""
    X1tu = ws.X1.T @ u
    Atu = float(ws.data.A @ u)
    k = coef.shape[0]
    G = np.empty((k + 2, k + 2))
    G[:k, :k] = ws.X1tX1
    G[:k, k] = G[k, :k] = ws.AtX1
    G[:k, k + 1] = G[k + 1, :k] = X1tu
    G[k, k] = ws.ata
    G[k, k + 1] = G[k + 1, k] = Atu
    G[k + 1, k + 1] = float(u @ u)
    C = np.vstack([coef, tau[None, :], lam[None, :]])
    GtM = np.vstack([ws.X1tM, ws.AtM[None, :], Mtu[None, :]])
    return float(ws.m_sumsq.sum() - 2.0 * np.sum(C * GtM) + np.sum(C * (G @ C)))


def update_mediator_block(state: ModelState, data: Dataset, priors: PriorConfig,
                          cfg: Optional[McmcConfig] = None) -> ModelState:
    cfg = cfg or McmcConfig()
    ws = _ws(state, data, cfg)
    rng = state.rng
    n, q = data.n, data.q
    fixed = cfg.fix_lambda_zero

    # latent factor scores; R lam is formed as M lam - X1 (coef lam) - A (tau . lam)
    if fixed:
        state.lam[:] = 0.0
        state.u[:] = 0.0
    else:
        coef = np.vstack([state.beta0[None, :], state.B])
        s = float(state.lam @ state.lam)
        Rlam = data.M @ state.lam - ws.X1 @ (coef @ state.lam) - data.A * float(state.tau @ state.lam)
        state.u = Rlam / (1.0 + s) + math.sqrt(state.sigma2 / (1.0 + s)) * rng.standard_normal(n)

    # intercepts and covariate coefficients, one shared precision
    mean, chol = beta_conditional(state, data, priors)
    z = rng.standard_normal(mean.shape)
    draw = mean + linalg.solve_triangular(chol.T, z, lower=False)
    state.beta0 = np.ascontiguousarray(draw[0])
    state.B = np.ascontiguousarray(draw[1:])

    Mtu = ws.Mt @ state.u if not fixed else np.zeros(q)
    if not fixed:
        # loadings: conjugate given u, then an MH correction because the tau
        # slab variance also depends on lam_j
        ut_target = Mtu - (ws.X1.T @ state.u) @ draw - float(data.A @ state.u) * state.tau
        uu = float(state.u @ state.u)
        prec_l = (uu + 1.0 / priors.h_lambda) / state.sigma2
        mean_l = (ut_target + priors.mu_lambda / priors.h_lambda) / state.sigma2 / prec_l
        prop = mean_l + rng.standard_normal(q) / math.sqrt(prec_l)
        logu = np.log(rng.random(q))
        act = state.gamma == 1
        if np.any(act):
            tau2 = state.tau**2
            v_old = priors.nu2 * state.sigma2 * (1.0 + state.lam**2)
            v_new = priors.nu2 * state.sigma2 * (1.0 + prop**2)
            log_r = -0.5 * (np.log(v_new / v_old) + tau2 / v_new - tau2 / v_old)
            ok = ~act | (logu < log_r)
            state.counts["lambda_mh"] += [int(act.sum()), int((ok & act).sum())]
        else:
            ok = np.ones(q, dtype=bool)
        state.lam = np.where(ok, prop, state.lam)

    # residual variance: inverse-gamma, including the active tau slabs
    sse = max(_residual_sumsq(ws, draw, state.tau, state.lam, state.u, Mtu), 0.0)
    act = state.gamma == 1
    k = int(act.sum())
    shape = priors.nu0 / 2.0 + (n * q + k) / 2.0
    rate = priors.nu0 * priors.sigma02 / 2.0 + 0.5 * sse
    if k:
        rate += 0.5 * float(np.sum(state.tau[act] ** 2 / (priors.nu2[act] * (1.0 + state.lam[act] ** 2))))
    if not fixed:
        shape += (n + q) / 2.0
        rate += 0.5 * float(state.u @ state.u)
        rate += 0.5 * float(np.sum((state.lam - priors.mu_lambda) ** 2)) / priors.h_lambda
    state.sigma2 = float(rate / rng.gamma(shape))
    if not (np.isfinite(state.sigma2) and state.sigma2 > 0):
        raise SamplerError("sigma2 draw is not positive and finite", state.iteration)

    # active exposure effects
    tmean, tvar = tau_conditional(state, data, priors)
    z = rng.standard_normal(q)
    state.tau = np.where(act, tmean + np.sqrt(tvar) * z, 0.0)
    return state


# ----------------------------------------------------------------------------
# selection sweeps


def update_gamma_tau(state: ModelState, data: Dataset, priors: PriorConfig,
                     j: Optional[int] = None, backend: str = "auto") -> ModelState:
    """Birth/death moves on ``(gamma_j, tau_j)``; a full random-order sweep when ``j`` is None.

    Each mediator gets one of two moves with equal probability:

    * single: ``(0, 0) <-> (1, 0)`` in ``(gamma_j, omega_j)``, with ``tau_j``
      proposed from its Gaussian full conditional, so acceptance reduces to
      the marginal likelihood ratio times the MRF and subsetting prior odds;
    * joint: ``(0, 0) <-> (1, 1)``, which also creates or deletes ``delta_j``
      and adds the outcome likelihood ratio.  Deleting ``gamma_j`` while
      ``omega_j = 1`` is only possible through this move.
    """
    ws = _ws(state, data)
    k = _backend(backend)
    rng = state.rng
    q = data.q
    order = rng.permutation(q).astype(np.int64) if j is None else np.array([j], dtype=np.int64)
    if np.any((order < 0) | (order >= q)):
        raise IndexError(j)
    m = order.shape[0]
    U = rng.random((m, 3))
    Z = rng.standard_normal((m, 2))
    a_resid = np.ascontiguousarray(a_residual(state, ws))
    slab_var = np.ascontiguousarray(priors.nu2 * state.sigma2 * (1.0 + state.lam**2))
    g = priors.mrf_graph
    counts = np.zeros(8, dtype=np.int64)
    k.gamma_tau_sweep(
        order, state.gamma, state.omega, state.tau, state.delta, state.eta,
        a_resid, ws.ata, float(state.sigma2), slab_var,
        float(priors.eta1_gamma), float(priors.eta2_gamma),
        g.indptr, g.indices, g.weights,
        float(priors.pi_omega), priors.psi2, ws.Mt, ws.y, ws.fam, ws.nv,
        state.cache, state.scratch, U, Z, counts,
    )
    state.counts["gamma"] += counts
    return state


def _adapt_log_scale(scale, accepted, t, target):
    step = (t + 1.0) ** -0.6
    return scale * np.exp(step * (accepted - target))


def update_omega_delta(state: ModelState, data: Dataset, priors: PriorConfig,
                       j: Optional[int] = None, backend: str = "auto",
                       rw_target: float = 0.44) -> ModelState:
    """Birth/death on ``(omega_j, delta_j)`` for mediators with ``gamma_j = 1``,
    followed by a random-walk refresh of each active ``delta_j``.

    Mediators with ``gamma_j = 0`` are skipped, so ``omega_j`` stays 0.
    """
    ws = _ws(state, data)
    k = _backend(backend)
    rng = state.rng
    q = data.q
    order = rng.permutation(q).astype(np.int64) if j is None else np.array([j], dtype=np.int64)
    m = order.shape[0]
    U = rng.random((m, 3))
    Z = rng.standard_normal((m, 2))
    counts = np.zeros(4, dtype=np.int64)
    rw = np.full(q, -1, dtype=np.int8)
    k.omega_delta_sweep(
        order, state.gamma, state.omega, state.delta, state.eta,
        float(priors.pi_omega), priors.psi2, ws.Mt, ws.y, ws.fam, ws.nv,
        state.cache, state.scratch, state.delta_scale, U, Z, counts, rw,
    )
    state.counts["omega"] += counts
    tried = rw >= 0
    state.counts["delta_rw"] += [int(tried.sum()), int((rw == 1).sum())]
    if state.adapting and np.any(tried):
        state.delta_scale = state.delta_scale.copy()
        state.delta_scale[tried] = _adapt_log_scale(
            state.delta_scale[tried], rw[tried].astype(float), state.iteration, rw_target)
    return state


# ----------------------------------------------------------------------------
# outcome coefficients


def _outcome_block(state: ModelState, priors: PriorConfig):
    ws = state.ws
    act = np.flatnonzero(state.omega)
    Dt = np.vstack([ws.Zt, ws.Mt[act]]) if act.size else ws.Zt
    theta = np.concatenate([state.alpha_full, state.delta[act]])
    prior_var = np.concatenate([priors.sigma_alpha, priors.psi2[act]])
    mass = ws.w0 * np.concatenate([ws.z_sumsq, ws.m_sumsq[act]]) + 1.0 / prior_var
    return act, np.ascontiguousarray(Dt), theta, prior_var, mass


def outcome_log_posterior(theta, Dt, y, family, prior_var):
    """Log density (up to a constant) and gradient of the outcome block."""
    eta = theta @ Dt
    lp = glm.loglik(family, y, eta) - 0.5 * float(np.sum(theta * theta / prior_var))
    grad = Dt @ glm.loglik_grad(family, y, eta) - theta / prior_var
    return lp, grad


def hmc_step(theta, logp_grad, mass, step, n_steps, rng, threshold=1000.0):
    """One HMC transition with a diagonal mass matrix.

    Returns ``(theta_new, accept_prob, accepted, divergent)``.
    """
    p0 = np.sqrt(mass) * rng.standard_normal(theta.shape[0])
    logu = math.log(rng.random())
    try:
        lp0, g = logp_grad(theta)
    except ValueError:
        return theta, 0.0, False, True
    h0 = -lp0 + 0.5 * float(np.sum(p0 * p0 / mass))
    x = theta.copy()
    mom = p0 + 0.5 * step * g
    divergent = False
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            x = x + step * mom / mass
            try:
                lp, g = logp_grad(x)
            except ValueError:
                divergent = True
                break
            if i < n_steps - 1:
                mom = mom + step * g
        if not divergent:
            mom = mom + 0.5 * step * g
            h1 = -lp + 0.5 * float(np.sum(mom * mom / mass))
            err = h1 - h0
            if not np.isfinite(err) or err > threshold:
                divergent = True
    if divergent:
        return theta, 0.0, False, True
    accept_prob = 1.0 if err <= 0 else math.exp(-err)
    if logu < -err:
        return x, accept_prob, True, False
    return theta, accept_prob, False, False


def hmc_refine(state: ModelState, data: Dataset, priors: PriorConfig,
               cfg: McmcConfig) -> ModelState:
    """Joint HMC move over ``alpha0, alpha, alpha_a`` and every active ``delta_j``."""
    ws = _ws(state, data, cfg)
    act, Dt, theta, prior_var, mass = _outcome_block(state, priors)

    def logp_grad(th):
        return outcome_log_posterior(th, Dt, ws.y, ws.family, prior_var)

    new, accept_prob, accepted, divergent = hmc_step(
        theta, logp_grad, mass, state.step_size, cfg.leapfrog_steps, state.rng,
        cfg.divergence_threshold)
    state.counts["hmc"] += [1, int(accepted)]
    state.counts["divergences"] += int(divergent)
    if accepted:
        p2 = state.alpha_full.shape[0]
        state.alpha_full = np.ascontiguousarray(new[:p2])
        state.delta[act] = new[p2:]
        refresh_eta(state, data, cfg.backend)
    if state.adapting:
        state.step_size = state.dual.update(accept_prob)
    return state


def update_outcome_coeffs(state: ModelState, data: Dataset, priors: PriorConfig,
                          cfg: Optional[McmcConfig] = None, backend: str = "auto") -> ModelState:
    cfg = cfg or McmcConfig()
    ws = _ws(state, data, cfg)
    k = _backend(backend)
    rng = state.rng
    d = state.alpha_full.shape[0]
    U = rng.random(d)
    Z = rng.standard_normal(d)
    acc = np.zeros(d, dtype=np.int8)
    k.coord_rw_sweep(state.alpha_full, ws.Zt, state.eta, ws.y, ws.fam, ws.nv,
                     state.cache, state.scratch, priors.sigma_alpha, state.alpha_scale, U, Z, acc)
    state.counts["alpha_rw"] += [d, int(acc.sum())]
    if state.adapting:
        state.alpha_scale = _adapt_log_scale(state.alpha_scale, acc.astype(float),
                                             state.iteration, cfg.rw_target)
    if cfg.refine_every and state.iteration % cfg.refine_every == 0:
        hmc_refine(state, data, priors, cfg)
    return state


def mcmc_step(state: ModelState, data: Dataset, priors: PriorConfig, cfg: McmcConfig) -> ModelState:
    update_mediator_block(state, data, priors, cfg)
    refresh_eta(state, data, cfg.backend)
    update_gamma_tau(state, data, priors, backend=cfg.backend)
    update_omega_delta(state, data, priors, backend=cfg.backend, rw_target=cfg.rw_target)
    update_outcome_coeffs(state, data, priors, cfg, backend=cfg.backend)
    state.iteration += 1
    if cfg.check_invariants:
        state.check()
    return state


# ----------------------------------------------------------------------------
# chains


DRAW_SCALARS = ("alpha0", "alpha_a", "sigma2", "loglik")
DRAW_VECTORS = ("gamma", "omega", "tau", "delta", "lam")


def mediator_loglik(state: ModelState, data: Dataset) -> float:
    """Marginal mediator log-likelihood under ``sigma2 (lam lam^T + I)``, from cross products."""
    ws = _ws(state, data)
    n, q = data.n, data.q
    coef = np.vstack([state.beta0[None, :], state.B])
    zero = np.zeros(q)
    sse = _residual_sumsq(ws, coef, state.tau, zero, np.zeros(n), zero)
    cov = FACovariance(state.lam, state.sigma2)
    Rlam = data.M @ state.lam - ws.X1 @ (coef @ state.lam) - data.A * float(state.tau @ state.lam)
    quad = (sse - float(Rlam @ Rlam) / (1.0 + cov.s)) / state.sigma2
    return -0.5 * (n * q * _LOG_2PI + n * cov.logdet + quad)


def joint_loglik(state: ModelState, data: Dataset) -> float:
    """Outcome log-likelihood plus the marginal mediator log-likelihood."""
    ws = _ws(state, data)
    return glm.loglik(ws.family, ws.y, state.eta) + mediator_loglik(state, data)


def config_hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _rate(a):
    return float(a[1] / a[0]) if a[0] else None


def acceptance_summary(counts: dict) -> dict:
    g, o = counts["gamma"], counts["omega"]
    return {
        "gamma_single_birth": _rate(g[0:2]),
        "gamma_single_death": _rate(g[2:4]),
        "gamma_joint_birth": _rate(g[4:6]),
        "gamma_joint_death": _rate(g[6:8]),
        "omega_birth": _rate(o[0:2]),
        "omega_death": _rate(o[2:4]),
        "delta_rw": _rate(counts["delta_rw"]),
        "alpha_rw": _rate(counts["alpha_rw"]),
        "lambda_mh": _rate(counts["lambda_mh"]),
        "hmc": _rate(counts["hmc"]),
    }


@dataclass
class ChainOutput:
    """Stored post-burn-in draws of one chain plus run metadata."""

    draws: dict
    meta: dict

    @property
    def n_draws(self) -> int:
        return int(self.draws["gamma"].shape[0])

    @property
    def q(self) -> int:
        return int(self.draws["gamma"].shape[1])

    @property
    def p(self) -> int:
        return int(self.draws["alpha"].shape[1])

    def check_invariants(self) -> None:
        g, o = self.draws["gamma"], self.draws["omega"]
        if np.any(o > g):
            raise AssertionError("stored draw with omega_j = 1 and gamma_j = 0")
        if np.any((g == 0) & (self.draws["tau"] != 0)):
            raise AssertionError("stored draw with tau_j != 0 and gamma_j = 0")
        if np.any((o == 0) & (self.draws["delta"] != 0)):
            raise AssertionError("stored draw with delta_j != 0 and omega_j = 0")

    def columns(self) -> list:
        cols = ["iteration", *DRAW_SCALARS]
        cols += [f"alpha[{k}]" for k in range(self.p)]
        for name in DRAW_VECTORS:
            cols += [f"{name}[{j}]" for j in range(self.q)]
        return cols

    def as_matrix(self) -> np.ndarray:
        parts = [self.draws["iteration"][:, None].astype(float)]
        parts += [self.draws[s][:, None] for s in DRAW_SCALARS]
        parts.append(self.draws["alpha"])
        parts += [self.draws[v].astype(float) for v in DRAW_VECTORS]
        return np.hstack(parts)

    def save(self, directory, name: str = "chain0", binary: bool = False) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = dict(self.meta, q=self.q, p=self.p, n_draws=self.n_draws)
        if binary:
            path = directory / f"{name}.draws.npz"
            np.savez_compressed(path, **self.draws)
        else:
            path = directory / f"{name}.draws.csv"
            np.savetxt(path, self.as_matrix(), delimiter=",", header=",".join(self.columns()),
                       comments="", fmt="%.17g")
        meta["draws_file"] = path.name
        (directory / f"{name}.manifest.json").write_text(json.dumps(meta, indent=2, default=_json_default))
        return path

    @classmethod
    def load(cls, manifest_path) -> "ChainOutput":
        manifest_path = Path(manifest_path)
        meta = json.loads(manifest_path.read_text())
        path = manifest_path.parent / meta["draws_file"]
        q, p = int(meta["q"]), int(meta["p"])
        if path.suffix == ".npz":
            with np.load(path) as z:
                draws = {k: z[k] for k in z.files}
        else:
            mat = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            draws = {"iteration": mat[:, 0].astype(np.int64)}
            col = 1
            for s in DRAW_SCALARS:
                draws[s] = mat[:, col]
                col += 1
            draws["alpha"] = mat[:, col:col + p]
            col += p
            for v in DRAW_VECTORS:
                block = mat[:, col:col + q]
                draws[v] = block.astype(np.int8) if v in ("gamma", "omega") else block
                col += q
        return cls(draws, meta)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


def run_chain(data: Dataset, priors: PriorConfig, cfg: McmcConfig, chain: int = 0,
              state: Optional[ModelState] = None) -> ChainOutput:
    """Run one chain; fully deterministic given ``(cfg.seed, chain)``."""
    if priors.q != data.q or priors.p != data.p:
        raise ValueError(f"prior dimensions (q={priors.q}, p={priors.p}) do not match data "
                         f"(q={data.q}, p={data.p})")
    rng = np.random.default_rng([cfg.seed, chain])
    if state is None:
        state = initial_state(data, priors, cfg, rng)
    n_burn, thin, D = cfg.n_burn, cfg.thin, cfg.n_draws
    q, p = data.q, data.p
    draws = {
        "iteration": np.zeros(D, dtype=np.int64),
        "alpha0": np.zeros(D), "alpha_a": np.zeros(D), "sigma2": np.zeros(D), "loglik": np.zeros(D),
        "alpha": np.zeros((D, p)),
        "gamma": np.zeros((D, q), dtype=np.int8), "omega": np.zeros((D, q), dtype=np.int8),
        "tau": np.zeros((D, q)), "delta": np.zeros((D, q)), "lam": np.zeros((D, q)),
    }
    t_start = time.perf_counter()
    d = 0
    for it in range(cfg.n_iter):
        state.adapting = it < n_burn
        if it == n_burn:
            state.step_size = state.dual.final
        try:
            mcmc_step(state, data, priors, cfg)
        except SamplerError:
            raise
        except (linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            raise SamplerError(str(exc), it) from exc
        if it >= n_burn and (it - n_burn) % thin == 0:
            draws["iteration"][d] = it
            draws["alpha0"][d] = state.alpha0
            draws["alpha_a"][d] = state.alpha_a
            draws["alpha"][d] = state.alpha
            draws["sigma2"][d] = state.sigma2
            draws["gamma"][d] = state.gamma
            draws["omega"][d] = state.omega
            draws["tau"][d] = state.tau
            draws["delta"][d] = state.delta
            draws["lam"][d] = state.lam
            draws["loglik"][d] = joint_loglik(state, data)
            d += 1
    elapsed = time.perf_counter() - t_start
    meta = {
        "seed": cfg.seed,
        "chain": chain,
        "config": cfg.to_dict(),
        "priors": priors.to_dict(),
        "config_hash": config_hash(cfg.to_dict(), priors.to_dict()),
        "family": data.family.value,
        "mediator_names": list(data.mediator_names),
        "n": data.n,
        "lambda_fixed_zero": cfg.fix_lambda_zero,
        "acceptance": acceptance_summary(state.counts),
        "divergences": int(state.counts["divergences"][0]),
        "hmc_step_size": state.step_size,
        "seconds_per_1k": 1000.0 * elapsed / cfg.n_iter,
        "kernel_backend": _backend(cfg.backend).IMPLEMENTATION,
    }
    out = ChainOutput(draws, meta)
    if cfg.check_invariants:
        out.check_invariants()
    return out


def run_chains(data: Dataset, priors: PriorConfig, cfg: McmcConfig, threads: int = 1) -> list:
    """Independent chains ``0..n_chains-1``; results do not depend on ``threads``."""
    chains = range(cfg.n_chains)
    if threads <= 1 or cfg.n_chains == 1:
        return [run_chain(data, priors, cfg, c) for c in chains]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: run_chain(data, priors, cfg, c), chains))
