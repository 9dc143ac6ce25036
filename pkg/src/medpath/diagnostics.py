"""Convergence checks and sampler validation.

* :func:`geweke` compares the mean of an early window of a trace with the
  mean of a late window, using batch-means estimates of each window's
  long-run variance.
* :func:`trace_export` flattens chains into long-format rows for plotting.
* :func:`getting_it_right` runs the successive-conditional simulator: data
  are redrawn from the model after every MCMC iteration, so if every kernel
  leaves the posterior invariant the parameter draws follow the prior.
"""
from __future__ import annotations

import csv
import itertools
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .glm import OutcomeFamily, sample_outcome
from .model import Dataset
from .priors import PriorConfig, mrf_log_potential
from .sampler import McmcConfig, ModelState, initial_state, mcmc_step, refresh_eta

Z_CRIT = 1.959963984540054


def batch_means_variance(x, batch_size: Optional[int] = None) -> float:
    """Long-run variance of ``x`` from non-overlapping batch means.

    The default batch size is ``floor(len(x) ** (1/3))``; trailing values
    that do not fill a batch are dropped.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    b = max(1, int(n ** (1.0 / 3.0))) if batch_size is None else int(batch_size)
    a = n // b
    if a < 2:
        raise ValueError(f"need at least two batches, got {a} from length {n}")
    means = x[:a * b].reshape(a, b).mean(axis=1)
    return float(b * means.var(ddof=1))


def geweke(trace, frac_a: float = 0.1, frac_b: float = 0.5) -> float:
    """Geweke z-score; ``nan`` when both windows have zero variance."""
    x = np.asarray(trace, dtype=float)
    n = x.shape[0]
    if n < 100:
        raise ValueError("trace needs at least 100 values")
    if not (0 < frac_a and 0 < frac_b and frac_a + frac_b <= 1):
        raise ValueError("windows must be positive and non-overlapping")
    a = x[:int(math.floor(frac_a * n))]
    b = x[n - int(math.floor(frac_b * n)):]
    va = batch_means_variance(a) / a.shape[0]
    vb = batch_means_variance(b) / b.shape[0]
    if va + vb <= 0:
        return float("nan")
    return float((a.mean() - b.mean()) / math.sqrt(va + vb))


# ---------------------------------------------------------------------------
# named scalar traces

DEFAULT_MONITORED = ("loglik", "alpha_a", "sigma2", "n_gamma", "n_omega")
_INDEXED = re.compile(r"^(alpha|tau|delta|lam|gamma|omega)\[(\d+)\]$")


def available_parameters(chain) -> list:
    names = ["loglik", "alpha0", "alpha_a", "sigma2", "n_gamma", "n_omega"]
    names += [f"alpha[{k}]" for k in range(chain.p)]
    for v in ("tau", "delta", "lam", "gamma", "omega"):
        names += [f"{v}[{j}]" for j in range(chain.q)]
    return names


def scalar_trace(chain, name: str) -> np.ndarray:
    d = chain.draws
    if name in ("loglik", "alpha0", "alpha_a", "sigma2"):
        return np.asarray(d[name], dtype=float)
    if name == "n_gamma":
        return d["gamma"].sum(axis=1).astype(float)
    if name == "n_omega":
        return d["omega"].sum(axis=1).astype(float)
    m = _INDEXED.match(name)
    if m:
        arr = d[m.group(1)]
        k = int(m.group(2))
        if k < arr.shape[1]:
            return arr[:, k].astype(float)
    raise KeyError(name)


def _check_names(chain, names):
    avail = set(available_parameters(chain))
    bad = [n for n in names if n not in avail]
    if bad:
        shown = ", ".join(available_parameters(chain)[:12])
        raise ValueError(f"unknown parameter(s) {bad}; available: {shown}, ...")


def trace_export(chains, names: Sequence[str] = DEFAULT_MONITORED) -> list:
    """Rows ``(chain, iteration, parameter, value)``."""
    chains = chains if isinstance(chains, (list, tuple)) else [chains]
    rows = []
    for c, chain in enumerate(chains):
        _check_names(chain, names)
        its = chain.draws["iteration"]
        for name in names:
            vals = scalar_trace(chain, name)
            rows.extend((c, int(i), name, float(v)) for i, v in zip(its, vals))
    return rows


def write_trace(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "iteration", "parameter", "value"])
        for c, i, name, v in rows:
            w.writerow([c, i, name, repr(v)])
    return path


def read_trace(path) -> list:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return [(int(c), int(i), name, float(v)) for c, i, name, v in r]


@dataclass(frozen=True)
class GewekeEntry:
    chain: int
    parameter: str
    z: float
    n: int
    frac_a: float = 0.1
    frac_b: float = 0.5

    @property
    def defined(self) -> bool:
        return not math.isnan(self.z)

    @property
    def passed(self) -> bool:
        return self.defined and abs(self.z) < Z_CRIT


def geweke_report(chains, names: Sequence[str] = DEFAULT_MONITORED, frac_a: float = 0.1,
                  frac_b: float = 0.5, active_cutoff: float = 0.5) -> list:
    """Geweke entries for the monitored scalars and well-supported coefficients.

    Coefficients ``tau[j]`` / ``delta[j]`` are included when their indicator is
    on in more than ``active_cutoff`` of the draws; their traces keep only the
    draws where the indicator is on.
    """
    chains = chains if isinstance(chains, (list, tuple)) else [chains]
    out = []
    for c, chain in enumerate(chains):
        _check_names(chain, names)
        series = [(name, scalar_trace(chain, name)) for name in names]
        for coef, ind in (("tau", "gamma"), ("delta", "omega")):
            on = chain.draws[ind] == 1
            for j in np.flatnonzero(on.mean(axis=0) > active_cutoff):
                series.append((f"{coef}[{j}]", chain.draws[coef][on[:, j], j]))
        for name, x in series:
            if x.shape[0] < 100:
                continue
            out.append(GewekeEntry(c, name, geweke(x, frac_a, frac_b), int(x.shape[0]), frac_a, frac_b))
    return out


def write_geweke(entries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "parameter", "z", "n", "frac_a", "frac_b", "defined", "pass"])
        for e in entries:
            w.writerow([e.chain, e.parameter, "" if not e.defined else repr(e.z), e.n,
                        e.frac_a, e.frac_b, int(e.defined), int(e.passed)])
    return path


# ---------------------------------------------------------------------------
# successive-conditional ("getting it right") validation


def mrf_configurations(priors: PriorConfig):
    """All ``2^q`` indicator vectors with their prior probabilities (small q only)."""
    q = priors.q
    if q > 16:
        raise ValueError("enumeration is limited to q <= 16")
    configs = np.array(list(itertools.product((0, 1), repeat=q)), dtype=np.int8)
    logp = np.array([mrf_log_potential(g, priors) for g in configs])
    p = np.exp(logp - logp.max())
    return configs, p / p.sum()


def sample_prior(priors: PriorConfig, n: int, rng: np.random.Generator,
                 fix_lambda_zero: bool = False) -> dict:
    """One joint prior draw of every parameter plus the latent factor scores."""
    q, p = priors.q, priors.p
    configs, probs = mrf_configurations(priors)
    gamma = configs[rng.choice(len(configs), p=probs)].copy()
    omega = (gamma == 1) & (rng.random(q) < priors.pi_omega)
    sigma2 = 1.0 / rng.gamma(priors.nu0 / 2.0, 2.0 / (priors.nu0 * priors.sigma02))
    if fix_lambda_zero:
        lam, u = np.zeros(q), np.zeros(n)
    else:
        lam = priors.mu_lambda + math.sqrt(priors.h_lambda * sigma2) * rng.standard_normal(q)
        u = math.sqrt(sigma2) * rng.standard_normal(n)
    coef = np.sqrt(priors.sigma_beta)[:, None] * rng.standard_normal((p + 1, q))
    tau_sd = np.sqrt(priors.nu2 * sigma2 * (1.0 + lam**2))
    tau = np.where(gamma == 1, tau_sd * rng.standard_normal(q), 0.0)
    delta = np.where(omega, np.sqrt(priors.psi2) * rng.standard_normal(q), 0.0)
    alpha_full = np.sqrt(priors.sigma_alpha) * rng.standard_normal(p + 2)
    return {"beta0": coef[0], "B": coef[1:], "tau": tau, "gamma": gamma.astype(np.int8),
            "lam": lam, "sigma2": float(sigma2), "alpha_full": alpha_full, "delta": delta,
            "omega": omega.astype(np.int8), "u": u}


def _simulate_data(design: Dataset, state: ModelState, family: OutcomeFamily, rng) -> Dataset:
    X, A = design.X, design.A
    mean = state.beta0 + np.outer(A, state.tau) + X @ state.B + np.outer(state.u, state.lam)
    M = mean + math.sqrt(state.sigma2) * rng.standard_normal(mean.shape)
    eta = state.alpha_full[0] + X @ state.alpha + state.alpha_full[-1] * A + M @ state.delta
    Y = sample_outcome(family, eta, rng)
    return Dataset(X, A, M, Y, family=design.family)


def getting_it_right(design: Dataset, priors: PriorConfig, cfg: McmcConfig, n_cycles: int,
                     seed: int = 0, thin: int = 1) -> dict:
    """Alternate one MCMC iteration with a fresh draw of ``(M, Y)`` given the parameters.

    ``design`` supplies the fixed ``X`` and ``A``.  Returns thinned traces of
    standardised parameters that are N(0, 1) under the prior, plus the
    indicator configurations.
    """
    rng = np.random.default_rng([seed, 1])
    family = OutcomeFamily(design.family, cfg.noise_var)
    init = sample_prior(priors, design.n, rng, cfg.fix_lambda_zero)
    state = initial_state(design, priors, cfg, np.random.default_rng([seed, 0]))
    for k, v in init.items():
        setattr(state, k, v.copy() if isinstance(v, np.ndarray) else v)
    data = _simulate_data(design, state, family, rng)
    state.ws = None
    refresh_eta(state, data, cfg.backend)
    keep = []
    for it in range(n_cycles):
        mcmc_step(state, data, priors, cfg)
        data = _simulate_data(design, state, family, rng)
        state.ws = None
        refresh_eta(state, data, cfg.backend)
        if it % thin == 0:
            keep.append(_standardised(state, priors))
    out = {k: np.array([row[k] for row in keep]) for k in keep[0]}
    return out


def _standardised(state: ModelState, priors: PriorConfig) -> dict:
    s = math.sqrt(state.sigma2)
    tau_sd = np.sqrt(priors.nu2 * state.sigma2 * (1.0 + state.lam**2))
    return {
        "sigma2": state.sigma2,
        "lam_z": (state.lam - priors.mu_lambda) / math.sqrt(priors.h_lambda) / s,
        "beta0_z": state.beta0 / math.sqrt(priors.sigma_beta[0]),
        "alpha_z": state.alpha_full / np.sqrt(priors.sigma_alpha),
        "tau_z": np.where(state.gamma == 1, state.tau / tau_sd, np.nan),
        "delta_z": np.where(state.omega == 1, state.delta / np.sqrt(priors.psi2), np.nan),
        "u0_z": state.u[0] / s,
        "gamma": state.gamma.copy(),
        "omega": state.omega.copy(),
    }
