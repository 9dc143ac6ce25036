"""Grid scan for the MRF smoothness parameter ``eta2_gamma``.

Raising ``eta2_gamma`` leaves the number of active exposure-mediator
indicators roughly flat until a critical value, past which it jumps.  The
scan runs a short chain per grid value and keeps the largest value strictly
below the first one whose summary clears the baseline by ``tolerance``.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .model import Dataset
from .priors import PriorConfig
from .sampler import McmcConfig, SamplerError, run_chain

DEFAULT_GRID = tuple(np.round(np.arange(0.0, 4.0001, 0.5), 10))
DEFAULT_TOLERANCE_PER_MEDIATOR = 0.02


def _mean_active(chain) -> float:
    return float(chain.draws["gamma"].sum(axis=1).mean())


def _mean_pathways(chain) -> float:
    g, w = chain.draws["gamma"], chain.draws["omega"]
    return float(((g == 1) & (w == 1)).sum(axis=1).mean())


SUMMARIES = {"mean_active": _mean_active, "mean_pathways": _mean_pathways}


@dataclass(frozen=True)
class TuneGrid:
    values: tuple = DEFAULT_GRID
    n_iter: int = 2000
    burn_in: float = 0.5
    tolerance: Optional[float] = None
    summary: str = "mean_active"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0 or v[0] != 0.0 or np.any(np.diff(v) <= 0):
            raise ValueError("grid must start at 0 and be strictly increasing")
        if self.n_iter < 500:
            raise ValueError("short runs need at least 500 iterations")
        if self.summary not in SUMMARIES:
            raise ValueError(f"unknown summary {self.summary!r}; choose from {sorted(SUMMARIES)}")
        if self.tolerance is not None and self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    def tol(self, q: int) -> float:
        return DEFAULT_TOLERANCE_PER_MEDIATOR * q if self.tolerance is None else float(self.tolerance)


@dataclass
class ScanResult:
    eta2: float
    no_transition: bool
    values: list
    summaries: list
    tolerance: float
    eta_pt: Optional[float] = None
    failures: dict = field(default_factory=dict)

    def rows(self) -> list:
        base = self.summaries[0] if self.summaries else float("nan")
        return [
            {"eta2": v, "summary": s, "exceeds": int(s > base + self.tolerance),
             "chosen": int(v == self.eta2)}
            for v, s in zip(self.values, self.summaries)
        ]

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["eta2", "summary", "exceeds", "chosen"])
            w.writeheader()
            w.writerows(self.rows())
        return path


class ScanError(RuntimeError):
    def __init__(self, message, partial: ScanResult):
        super().__init__(message)
        self.partial = partial


def choose_eta2(values, summaries, tolerance):
    """``(chosen, eta_pt)``; ``eta_pt`` is None when nothing clears the threshold."""
    base = summaries[0]
    for g, s in enumerate(summaries):
        if s > base + tolerance:
            return values[g - 1], values[g]
    return values[-1], None


def phase_transition_scan(data: Dataset, priors: PriorConfig, grid: TuneGrid = TuneGrid(),
                          mcmc_cfg: McmcConfig = McmcConfig(), threads: int = 1) -> ScanResult:
    """Short chains over ``grid.values`` with a shared seed and start."""
    cfg = replace(mcmc_cfg, n_iter=grid.n_iter, burn_in=grid.burn_in, thin=1, n_chains=1)
    stat = SUMMARIES[grid.summary]
    tol = grid.tol(data.q)

    def one(v):
        return stat(run_chain(data, priors.with_eta2(v), cfg, chain=0))

    values = list(grid.values)
    summaries, failures = [], {}
    if threads > 1 and len(values) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(one, v) for v in values]
            for v, f in zip(values, futures):
                try:
                    summaries.append(f.result())
                except SamplerError as exc:
                    failures[v] = str(exc)
                    break
    else:
        for v in values:
            try:
                summaries.append(one(v))
            except SamplerError as exc:
                failures[v] = str(exc)
                break
    if failures:
        partial = ScanResult(float("nan"), True, values[:len(summaries)], summaries, tol,
                             failures=failures)
        raise ScanError(f"scan aborted at eta2={next(iter(failures))}", partial)
    chosen, eta_pt = choose_eta2(values, summaries, tol)
    return ScanResult(chosen, eta_pt is None, values, summaries, tol, eta_pt)
