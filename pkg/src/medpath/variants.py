"""The three model variants compared throughout, built from one engine.

``mvn-mrf-ssb``
    factor-analytic mediator covariance, MRF prior on ``gamma`` with
    ``eta2_gamma`` picked by the phase-transition scan.
``mvn-ib-ssb``
    same covariance, independent Bernoulli prior (``eta2_gamma = 0``).
``normal-ib-ssb``
    independent mediators (``lam`` frozen at 0) and independent Bernoulli.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .model import Dataset
from .priors import DEFAULT_RHO_CUT, MrfGraph, PriorConfig
from .sampler import McmcConfig, run_chains
from .tuning import ScanResult, TuneGrid, phase_transition_scan

VARIANTS = ("mvn-mrf-ssb", "mvn-ib-ssb", "normal-ib-ssb")


def check_variant(name: str) -> str:
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return name


def variant_config(name: str, cfg: McmcConfig) -> McmcConfig:
    check_variant(name)
    return replace(cfg, fix_lambda_zero=(name == "normal-ib-ssb"))


def build_priors(data: Dataset, name: str, rho_cut: float = DEFAULT_RHO_CUT,
                 graph: Optional[MrfGraph] = None, **overrides) -> PriorConfig:
    """Default priors for a variant; the MRF graph is only built for the MRF variant."""
    check_variant(name)
    if name == "mvn-mrf-ssb":
        if graph is None:
            graph = MrfGraph.from_mediators(data.M, rho_cut=rho_cut)
    else:
        graph = None
        overrides = {k: v for k, v in overrides.items() if k != "eta2_gamma"}
    return PriorConfig.default(data.q, data.p, graph, **overrides)


@dataclass
class VariantFit:
    variant: str
    priors: PriorConfig
    chains: list
    scan: Optional[ScanResult] = None


def fit_variant(data: Dataset, name: str, cfg: McmcConfig, priors: Optional[PriorConfig] = None,
                grid: Optional[TuneGrid] = TuneGrid(), threads: int = 1,
                rho_cut: float = DEFAULT_RHO_CUT) -> VariantFit:
    """Fit one variant; for the MRF variant, tune ``eta2_gamma`` first unless ``grid`` is None."""
    cfg = variant_config(name, cfg)
    if priors is None:
        priors = build_priors(data, name, rho_cut=rho_cut)
    scan = None
    if name == "mvn-mrf-ssb" and grid is not None:
        scan = phase_transition_scan(data, priors, grid, cfg, threads=threads)
        priors = priors.with_eta2(scan.eta2)
    elif name != "mvn-mrf-ssb":
        priors = priors.independent()
    chains = run_chains(data, priors, cfg, threads=threads)
    return VariantFit(name, priors, chains, scan)
