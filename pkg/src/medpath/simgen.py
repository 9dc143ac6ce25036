"""Simulation scenarios and the replication loop that scores the model variants.

Scenarios I-IV share the same mediator and outcome coefficients:

* I: single-factor mediator correlation (``lam = 0.35``), logit outcome.
* II: independent mediators (``lam = 0``).
* III: global null, every ``tau_j = 0``.
* IV-1 / IV-2: probit-generated outcome fitted with logit / probit.
* V: heterogeneous block correlation, either read from a file or built by
  :func:`synthetic_hetero_cov`.

The nonzero signal occupies the first 30 mediators: six blocks of five
equal ``tau`` values, and within every block ``delta`` runs through
``(1.5, 2.0, 2.5, 0, 0)``, giving 18 true pathways.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from . import effects
from .glm import Family, OutcomeFamily, sample_outcome
from .model import Dataset
from .sampler import McmcConfig, SamplerError
from .tuning import ScanError, TuneGrid
from .variants import VARIANTS, fit_variant

SCENARIOS = ("I", "II", "III", "IV-1", "IV-2", "V")
TAU_LEVELS = (-0.12, -0.08, -0.04, 0.04, 0.08, 0.12)
D_PATTERN = (1.5, 2.0, 2.5, 0.0, 0.0)
N_SIGNAL = 30
TRUE_CONTRAST = 2.0

# correlation profile the synthetic Scenario V matrix is calibrated to
TARGET_MEAN_ABS = 0.157
TARGET_FRAC_03 = 0.134
BAND_MEAN_ABS = (0.14, 0.17)
BAND_FRAC_03 = (0.10, 0.17)
BAND_FRAC_05 = (0.03, 0.09)


def signal_tau(q: int) -> np.ndarray:
    tau = np.zeros(q)
    block = np.repeat(TAU_LEVELS, 5)
    tau[:min(q, N_SIGNAL)] = block[:q]
    return tau


def signal_delta(q: int) -> np.ndarray:
    delta = np.zeros(q)
    block = np.kron(np.ones(6), D_PATTERN)
    delta[:min(q, N_SIGNAL)] = block[:q]
    return delta


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str
    n: int
    q: int
    p: int
    lam: float
    loadings: tuple
    tau: np.ndarray
    delta: np.ndarray
    beta0: float = 0.1
    B: float = 0.1
    alpha0: float = -2.5
    alpha: float = 2.0
    alpha_a: float = 2.0
    sigma2: float = 1.0
    gen_link: str = "logit"
    fit_link: str = "logit"
    cov_file: Optional[str] = None
    synthetic_cov: bool = False
    replicates: int = 120
    base_seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        tau = np.asarray(self.tau, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        if tau.shape != (self.q,) or delta.shape != (self.q,):
            raise ValueError("tau and delta must have length q")
        if len(self.loadings) != self.p:
            raise ValueError(f"need {self.p} exposure loadings, got {len(self.loadings)}")
        if self.scenario == "III" and np.any(tau != 0):
            raise ValueError("Scenario III requires tau = 0")
        if self.scenario.startswith("IV") and self.gen_link != "probit":
            raise ValueError("Scenario IV generates a probit outcome")
        if self.n < 2 or self.q < 1 or self.p < 0 or self.replicates < 1:
            raise ValueError("invalid dimensions or replicate count")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "delta", delta)

    @classmethod
    def make(cls, scenario: str, n: Optional[int] = None, q: Optional[int] = None, **kw) -> "ScenarioSpec":
        """Standard settings for ``scenario``, optionally rescaled in ``n`` and ``q``."""
        if scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
        if scenario == "V":
            n0, q0, loadings = 466, 298, (0.5, 0.2, 0.7)
        else:
            n0, q0, loadings = 1000, 300, (0.5, 0.2, 0.7, 0.4, 0.6)
        q = q0 if q is None else int(q)
        base = dict(
            scenario=scenario, n=n0 if n is None else int(n), q=q, p=len(loadings),
            lam=0.0 if scenario in ("II", "V") else 0.35, loadings=loadings,
            tau=np.zeros(q) if scenario == "III" else signal_tau(q), delta=signal_delta(q),
            gen_link="probit" if scenario.startswith("IV") else "logit",
            fit_link="probit" if scenario == "IV-2" else "logit",
        )
        base.update(kw)
        return cls(**base)

    def with_replicates(self, replicates: int) -> "ScenarioSpec":
        return replace(self, replicates=int(replicates))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tau"] = self.tau.tolist()
        d["delta"] = self.delta.tolist()
        d["loadings"] = list(self.loadings)
        return d


@dataclass(frozen=True)
class Truth:
    tau: np.ndarray
    delta: np.ndarray
    alpha_a: float
    contrast: float = TRUE_CONTRAST

    @property
    def gamma(self) -> np.ndarray:
        return (self.tau != 0).astype(np.int8)

    @property
    def pathway(self) -> np.ndarray:
        return ((self.tau != 0) & (self.delta != 0)).astype(np.int8)

    @property
    def ie(self) -> np.ndarray:
        return self.contrast * self.tau * self.delta

    @property
    def de(self) -> float:
        return self.contrast * self.alpha_a

    def to_dict(self) -> dict:
        return {"tau": self.tau.tolist(), "delta": self.delta.tolist(), "gamma": self.gamma.tolist(),
                "pathway": self.pathway.tolist(), "ie": self.ie.tolist(), "de": self.de,
                "contrast": self.contrast}


# ---------------------------------------------------------------------------
# Scenario V covariance


def correlation_profile(C) -> tuple:
    """``(mean |r|, frac |r| >= 0.3, frac |r| >= 0.5)`` over the upper triangle."""
    C = np.asarray(C, dtype=float)
    r = np.abs(C[np.triu_indices_from(C, 1)])
    return float(r.mean()), float(np.mean(r >= 0.3)), float(np.mean(r >= 0.5))


def _in_band(x, band):
    return band[0] <= x <= band[1]


def _bisect(f, lo, hi, target, iters):
    # f increasing in its argument
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _block_layout(q, rng, n_bulk=8):
    from scipy.stats import norm

    K = max(2, int(round(q / 50)))
    sizes = np.maximum(2, np.round(rng.dirichlet(np.full(K, 4.0)) * 0.85 * q)).astype(int)
    label = np.full(q, -1)
    perm = rng.permutation(q)
    pos = 0
    for k, s in enumerate(sizes):
        label[perm[pos:pos + s]] = k
        pos += s
    strength = rng.permutation(np.exp(0.55 * norm.ppf((np.arange(K) + 0.5) / K)))
    b = np.where(label >= 0, strength[np.maximum(label, 0)] * rng.uniform(0.85, 1.0, q), 0.0)
    W = rng.standard_normal((q, n_bulk))
    return label, b, W, K


def _layout_corr(layout, bulk, block):
    label, b, W, K = layout
    q = label.shape[0]
    L = np.zeros((q, K))
    m = label >= 0
    L[np.flatnonzero(m), label[m]] = block * b[m]
    F = np.hstack([L, bulk * W])
    C = F @ F.T + np.eye(q)
    s = np.sqrt(np.diag(C))
    return C / np.outer(s, s)


def synthetic_hetero_cov(q: int, seed: int, max_tries: int = 50) -> np.ndarray:
    """Block-structured correlation matrix mimicking a metabolomics panel.

    Mediators fall into blocks of uneven size and strength on top of a weak
    random bulk factor structure.  Bulk and block scales are bisected so the
    mean absolute off-diagonal correlation is 0.157 and 13.4% of pairs have
    ``|r| >= 0.3``.  The layout is redrawn from derived seeds until the
    ``|r| >= 0.5`` fraction also lands in ``[0.03, 0.09]``.

    Raises
    ------
    RuntimeError
        If no layout within ``max_tries`` meets all three targets.
    """
    if q < 2:
        raise ValueError("q must be at least 2")
    best = None
    for attempt in range(max_tries):
        rng = np.random.default_rng([seed, attempt])
        layout = _block_layout(q, rng)

        def bulk_for(block):
            return _bisect(lambda a: correlation_profile(_layout_corr(layout, a, block))[0],
                           0.0, 1.0, TARGET_MEAN_ABS, 30)

        block = _bisect(lambda c: correlation_profile(_layout_corr(layout, bulk_for(c), c))[1],
                        0.0, 6.0, TARGET_FRAC_03, 25)
        C = _layout_corr(layout, bulk_for(block), block)
        m, f3, f5 = correlation_profile(C)
        ok = (_in_band(m, BAND_MEAN_ABS) and _in_band(f3, BAND_FRAC_03) and _in_band(f5, BAND_FRAC_05)
              and np.linalg.eigvalsh(C)[0] > 0)
        if ok:
            return C
        best = (m, f3, f5)
    raise RuntimeError(f"covariance calibration failed for q={q}, seed={seed}; "
                       f"last profile (mean|r|, >=0.3, >=0.5) = {best}")


def load_covariance(path, q: int) -> np.ndarray:
    C = np.loadtxt(path, delimiter=",", ndmin=2)
    if C.shape != (q, q):
        raise ValueError(f"covariance file {path} has shape {C.shape}, expected ({q}, {q})")
    if not np.allclose(C, C.T):
        raise ValueError(f"covariance file {path} is not symmetric")
    return 0.5 * (C + C.T)


def scenario_covariance(spec: ScenarioSpec) -> Optional[np.ndarray]:
    """Dense mediator covariance for Scenario V; ``None`` means use the factor form."""
    if spec.scenario != "V":
        return None
    if spec.cov_file:
        return load_covariance(spec.cov_file, spec.q)
    if spec.synthetic_cov:
        return spec.sigma2 * synthetic_hetero_cov(spec.q, spec.base_seed)
    raise ValueError("Scenario V needs a covariance file or the synthetic covariance option")


# ---------------------------------------------------------------------------
# data generation


def generate(spec: ScenarioSpec, replicate: int, cov: Optional[np.ndarray] = None):
    """One dataset and its truth; a pure function of ``(spec, replicate)``.

    ``cov`` may pass a precomputed Scenario V covariance to skip recalibration.
    """
    if not 0 <= replicate < spec.replicates:
        raise ValueError(f"replicate {replicate} outside [0, {spec.replicates})")
    rng = np.random.default_rng(spec.base_seed + replicate)
    n, q, p = spec.n, spec.q, spec.p
    X = rng.standard_normal((n, p))
    A = X @ np.asarray(spec.loadings, dtype=float) + rng.standard_normal(n)
    mean = spec.beta0 + np.outer(A, spec.tau) + spec.B * X.sum(axis=1, keepdims=True)
    if spec.scenario == "V":
        if cov is None:
            cov = scenario_covariance(spec)
        E = rng.standard_normal((n, q)) @ np.linalg.cholesky(cov).T
    else:
        u = rng.standard_normal(n)
        E = math.sqrt(spec.sigma2) * (spec.lam * u[:, None] + rng.standard_normal((n, q)))
    M = mean + E
    eta = spec.alpha0 + M @ spec.delta + spec.alpha * X.sum(axis=1) + spec.alpha_a * A
    Y = sample_outcome(OutcomeFamily.of(spec.gen_link), eta, rng)
    data = Dataset(X, A, M, Y, family=Family.parse(spec.fit_link),
                   mediator_names=[f"M{j + 1}" for j in range(q)])
    return data, Truth(spec.tau.copy(), spec.delta.copy(), spec.alpha_a)


def write_dataset(data: Dataset, truth: Truth, directory, stem: str = "data") -> Path:
    """Delimited table (``Y, A, X1.., M1..``) plus a truth JSON."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    xnames = [f"X{k + 1}" for k in range(data.p)]
    header = ["Y", "A", *xnames, *data.mediator_names]
    table = np.column_stack([data.Y, data.A, data.X, data.M])
    path = directory / f"{stem}.csv"
    np.savetxt(path, table, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    (directory / f"{stem}.truth.json").write_text(json.dumps(truth.to_dict(), indent=2))
    return path


# ---------------------------------------------------------------------------
# replication study

METRICS = ("tpr", "fpr", "ppv", "npv", "nvs")


@dataclass
class StudyResult:
    spec: ScenarioSpec
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def aggregate(self) -> list:
        """Mean and SD per (variant, level, metric); absent rates are skipped."""
        out = []
        variants = sorted({r["variant"] for r in self.rows}, key=VARIANTS.index)
        for v in variants:
            for level in ("gamma", "pathway"):
                sel = [r for r in self.rows if r["variant"] == v and r["level"] == level]
                for m in METRICS:
                    vals = np.array([r[m] for r in sel if r[m] is not None], dtype=float)
                    out.append({
                        "scenario": self.spec.scenario, "variant": v, "level": level, "metric": m,
                        "mean": float(vals.mean()) if vals.size else None,
                        "sd": float(vals.std(ddof=1)) if vals.size > 1 else None,
                        "n": int(vals.size),
                    })
        return out

    def metric(self, variant: str, level: str, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows
                         if r["variant"] == variant and r["level"] == level and r[name] is not None],
                        dtype=float)

    def write(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        cols = ["replicate", "variant", "level", *METRICS, "eta2", "seconds"]
        with open(directory / "replicates.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in cols})
        with open(directory / "table1.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["scenario", "variant", "level", "metric", "mean", "sd", "n"])
            w.writeheader()
            for r in self.aggregate():
                w.writerow({k: ("" if v is None else v) for k, v in r.items()})
        doc = {"scenario": self.spec.to_dict(), "failures": self.failures,
               "n_failures": len(self.failures), "aggregate": self.aggregate()}
        (directory / "study.json").write_text(json.dumps(doc, indent=2))
        return directory / "table1.csv"


def format_table1(result: StudyResult) -> str:
    """Plain-text report with one row per variant: TPR/FPR/PPV/NPV/NVS for both levels."""
    agg = {(r["variant"], r["level"], r["metric"]): r for r in result.aggregate()}
    variants = sorted({k[0] for k in agg}, key=VARIANTS.index)
    head = f"{'Scenario':<9}{'Model':<15}" + "".join(
        f"{lvl + ':' + m.upper():>16}" for lvl in ("gamma", "pathway") for m in METRICS)
    lines = [head]
    for v in variants:
        cells = []
        for lvl in ("gamma", "pathway"):
            for m in METRICS:
                r = agg[(v, lvl, m)]
                if r["mean"] is None:
                    cells.append(f"{'--':>16}")
                else:
                    sd = "" if r["sd"] is None else f" ({r['sd']:.1f})"
                    cells.append(f"{r['mean']:.1f}{sd}".rjust(16))
        lines.append(f"{result.spec.scenario:<9}{v:<15}" + "".join(cells))
    if result.failures:
        lines.append(f"failed fits: {len(result.failures)}")
    return "\n".join(lines)


def score_replicate(chains, truth: Truth, cutoff: float = 0.5) -> dict:
    """Operating characteristics of the gamma and pathway selections."""
    g = effects.pooled(chains, "gamma")
    sel_gamma = effects.select_pathways(g.mean(axis=0), cutoff)
    sel_path = effects.select_pathways(effects.compute_ppi(chains), cutoff)
    return {"gamma": effects.score_selection(sel_gamma, truth.gamma),
            "pathway": effects.score_selection(sel_path, truth.pathway)}


def run_study(spec: ScenarioSpec, cfg: McmcConfig, variants: Sequence[str] = VARIANTS,
              grid: Optional[TuneGrid] = TuneGrid(), threads: int = 1, rho_cut: Optional[float] = None,
              cutoff: float = 0.5, on_fit: Optional[Callable] = None) -> StudyResult:
    """Generate each replicate, fit every variant, score both selection levels.

    Each fit uses chain seed ``cfg.seed + replicate``, so all variants of a
    replicate share their random stream.  A failed fit is recorded and the
    study continues.  ``on_fit(replicate, variant, fit, truth)`` is called
    after every successful fit, for callers that need more than the scores.
    """
    from .priors import DEFAULT_RHO_CUT

    rho = DEFAULT_RHO_CUT if rho_cut is None else rho_cut
    cov = scenario_covariance(spec)
    result = StudyResult(spec)

    def one(job):
        r, v = job
        data, truth = generate(spec, r, cov)
        t0 = time.perf_counter()
        try:
            fit = fit_variant(data, v, replace(cfg, seed=cfg.seed + r), grid=grid, rho_cut=rho)
        except (SamplerError, ScanError, np.linalg.LinAlgError, FloatingPointError) as exc:
            return r, v, None, str(exc), 0.0
        if on_fit is not None:
            on_fit(r, v, fit, truth)
        return r, v, fit, score_replicate(fit.chains, truth, cutoff), time.perf_counter() - t0

    jobs = [(r, v) for r in range(spec.replicates) for v in variants]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one, jobs))
    else:
        outcomes = [one(j) for j in jobs]
    for r, v, fit, scores, secs in outcomes:
        if fit is None:
            result.failures.append({"replicate": r, "variant": v, "error": scores})
            continue
        for level, oc in scores.items():
            row = {"replicate": r, "variant": v, "level": level, **oc.to_dict(),
                   "eta2": fit.priors.eta2_gamma, "seconds": secs}
            result.rows.append(row)
    return result
