"""Posterior inclusion, pathway selection, effect decomposition and scoring.

Effects are coefficient products on the linear-predictor scale.  For an
exposure contrast ``c = a - a_star``::

    IE_j   = c * tau_j * delta_j
    DE     = c * alpha_a
    log TE = DE + sum_j IE_j

Under the logit link these are log odds ratios of the regression itself.
They are not integrated over the counterfactual mediator distribution, so
with a common outcome they differ from marginal odds ratios.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class ExposureContrast:
    a: float
    a_star: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.a_star)):
            raise ValueError("contrast endpoints must be finite")

    @property
    def c(self) -> float:
        return float(self.a - self.a_star)

    @classmethod
    def of(cls, c: float) -> "ExposureContrast":
        return cls(float(c), 0.0)

    @classmethod
    def from_exposure(cls, A, upper: float = 75.0, lower: float = 25.0) -> "ExposureContrast":
        """Percentile contrast of the observed exposure, 75th vs 25th by default."""
        hi, lo = np.percentile(np.asarray(A, dtype=float), [upper, lower])
        return cls(float(hi), float(lo))


def _as_list(chains):
    if isinstance(chains, (list, tuple)):
        return list(chains)
    return [chains]


def pooled(chains, key: str) -> np.ndarray:
    """Stack one draw array across chains, checking the mediator count agrees."""
    chains = _as_list(chains)
    if not chains:
        raise ValueError("no chains supplied")
    qs = {c.q for c in chains}
    if len(qs) != 1:
        raise ValueError(f"chains disagree on the number of mediators: {sorted(qs)}")
    arr = np.concatenate([np.asarray(c.draws[key]) for c in chains], axis=0)
    if arr.shape[0] == 0:
        raise ValueError("no stored draws")
    return arr


def compute_ppi(chains) -> np.ndarray:
    """Fraction of pooled draws with ``gamma_j = omega_j = 1``."""
    g = pooled(chains, "gamma")
    w = pooled(chains, "omega")
    return ((g == 1) & (w == 1)).mean(axis=0)


def select_pathways(ppi, cutoff: float = 0.5) -> np.ndarray:
    """Median-probability selection: ``ppi > cutoff`` (ties excluded)."""
    if not 0.0 < cutoff < 1.0:
        raise ValueError("cutoff must lie in (0, 1)")
    return (np.asarray(ppi, dtype=float) > cutoff).astype(np.int8)


def effect_draws(chains, contrast) -> dict:
    """Per-draw IE (draws x q), DE and log TE."""
    c = contrast.c if isinstance(contrast, ExposureContrast) else float(contrast)
    tau = pooled(chains, "tau")
    delta = pooled(chains, "delta")
    alpha_a = pooled(chains, "alpha_a")
    ie = c * tau * delta
    de = c * alpha_a
    return {"ie": ie, "de": de, "log_te": de + ie.sum(axis=1)}


def decomposition_error(draws: dict) -> float:
    """Largest ``|log TE - (DE + sum IE)|`` over draws."""
    resid = draws["log_te"] - (draws["de"] + draws["ie"].sum(axis=1))
    return float(np.max(np.abs(resid))) if resid.size else 0.0


def _summary(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return {"mean": None, "sd": None, "lo": None, "hi": None}
    lo, hi = np.percentile(x, [2.5, 97.5])
    return {"mean": float(x.mean()), "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
            "lo": float(lo), "hi": float(hi)}


@dataclass
class EffectSummary:
    contrast: float
    names: list
    ppi: np.ndarray
    selected: np.ndarray
    ie_mean: np.ndarray
    ie_sd: np.ndarray
    ie_cond_mean: np.ndarray
    ie_cond_sd: np.ndarray
    n_cond: np.ndarray
    de: dict
    te: dict
    or_de: dict
    or_te: dict
    cutoff: float = 0.5

    def mediator_rows(self, truth_ie: Optional[Sequence[float]] = None) -> list:
        rows = []
        for j, name in enumerate(self.names):
            cm = self.ie_cond_mean[j]
            row = {
                "mediator": name,
                "ppi": float(self.ppi[j]),
                "selected": int(self.selected[j]),
                "ie_mean": float(self.ie_mean[j]),
                "ie_sd": float(self.ie_sd[j]),
                "ie_cond_mean": None if np.isnan(cm) else float(cm),
                "ie_cond_sd": None if np.isnan(self.ie_cond_sd[j]) else float(self.ie_cond_sd[j]),
                "or_ie_cond": None if np.isnan(cm) else float(np.exp(cm)),
                "n_cond": int(self.n_cond[j]),
            }
            if truth_ie is not None:
                row["true_ie"] = float(truth_ie[j])
            rows.append(row)
        return rows

    def to_dict(self, truth_ie=None) -> dict:
        return {
            "contrast": self.contrast,
            "cutoff": self.cutoff,
            "n_selected": int(self.selected.sum()),
            "direct": {"log": self.de, "odds_ratio": self.or_de},
            "total": {"log": self.te, "odds_ratio": self.or_te},
            "mediators": self.mediator_rows(truth_ie),
        }

    def write(self, directory, truth_ie=None) -> Path:
        """``effects.json`` plus a per-mediator ``effects.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        doc = self.to_dict(truth_ie)
        (directory / "effects.json").write_text(json.dumps(doc, indent=2))
        rows = doc["mediators"]
        with open(directory / "effects.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["mediator"])
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if v is None else v) for k, v in r.items()})
        return directory / "effects.json"


def decompose_effects(chains, contrast, cutoff: float = 0.5) -> EffectSummary:
    """Model-averaged and inclusion-conditional effect summaries."""
    chains = _as_list(chains)
    d = effect_draws(chains, contrast)
    g = pooled(chains, "gamma")
    w = pooled(chains, "omega")
    both = (g == 1) & (w == 1)
    ppi = both.mean(axis=0)
    ie = d["ie"]
    q = ie.shape[1]
    n_cond = both.sum(axis=0)
    cmean = np.full(q, np.nan)
    csd = np.full(q, np.nan)
    for j in np.flatnonzero(n_cond):
        x = ie[both[:, j], j]
        cmean[j] = x.mean()
        csd[j] = x.std(ddof=1) if x.size > 1 else 0.0
    names = chains[0].meta.get("mediator_names") or [f"M{j + 1}" for j in range(q)]
    c = contrast.c if isinstance(contrast, ExposureContrast) else float(contrast)
    return EffectSummary(
        contrast=c,
        names=list(names),
        ppi=ppi,
        selected=select_pathways(ppi, cutoff),
        ie_mean=ie.mean(axis=0),
        ie_sd=ie.std(axis=0, ddof=1) if ie.shape[0] > 1 else np.zeros(q),
        ie_cond_mean=cmean,
        ie_cond_sd=csd,
        n_cond=n_cond,
        de=_summary(d["de"]),
        te=_summary(d["log_te"]),
        or_de=_summary(np.exp(d["de"])),
        or_te=_summary(np.exp(d["log_te"])),
        cutoff=cutoff,
    )


@dataclass(frozen=True)
class OperatingCharacteristics:
    """Rates in percent; ``None`` where the denominator is zero."""

    tpr: Optional[float]
    fpr: Optional[float]
    ppv: Optional[float]
    npv: Optional[float]
    nvs: int
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self) -> dict:
        return asdict(self)


def _pct(num, den):
    return None if den == 0 else 100.0 * num / den


def score_selection(selected, truth) -> OperatingCharacteristics:
    s = np.asarray(selected).astype(bool)
    t = np.asarray(truth).astype(bool)
    if s.shape != t.shape:
        raise ValueError(f"selection has shape {s.shape}, truth has {t.shape}")
    tp = int(np.sum(s & t))
    fp = int(np.sum(s & ~t))
    tn = int(np.sum(~s & ~t))
    fn = int(np.sum(~s & t))
    return OperatingCharacteristics(
        tpr=_pct(tp, tp + fn), fpr=_pct(fp, fp + tn), ppv=_pct(tp, tp + fp), npv=_pct(tn, tn + fn),
        nvs=tp + fp, tp=tp, fp=fp, tn=tn, fn=fn,
    )
