"""Command-line front end.

Subcommands::

    medpath tune      --config run.yaml
    medpath fit       --config run.yaml [--variant V] [--seed S] [--out DIR]
    medpath summarize RUN_DIR [--contrast C] [--out DIR]
    medpath geweke    RUN_DIR [--parameters loglik,sigma2,...]
    medpath simulate  --scenario I [--replicates R] [--seed S] --out DIR
    medpath study     --scenario I [--replicates R] [--variant V,...] --out DIR

Configuration files are YAML (JSON is accepted, being a YAML subset).
Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 file I/O.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import diagnostics, effects, simgen
from .glm import Family
from .model import Dataset, standardize_mediators
from .priors import DEFAULT_RHO_CUT, MrfGraph, PriorConfig
from .sampler import ChainOutput, McmcConfig, SamplerError, run_chains
from .tuning import ScanError, TuneGrid, phase_transition_scan
from .variants import VARIANTS, build_priors, check_variant, variant_config

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3
EXIT_IO = 4
THREADS_ENV = "MEDPATH_THREADS"

PRIOR_FIELDS = {"nu2", "psi2", "sigma_beta", "sigma_alpha", "mu_lambda", "h_lambda", "nu0",
                "sigma02", "eta1_gamma", "eta2_gamma", "pi_omega"}
MCMC_FIELDS = {f.name for f in fields(McmcConfig)}
TUNE_FIELDS = {f.name for f in fields(TuneGrid)}
SCENARIO_KEYS = {"n", "q", "replicates", "base_seed", "cov_file", "synthetic_cov"}
TOP_KEYS = {"data", "family", "variant", "priors", "mcmc", "tuning", "rho_cut", "graph",
            "contrast", "cutoff", "out", "threads", "binary_draws", "simulation", "trace",
            "signed_graph"}


class ConfigError(ValueError):
    """Invalid configuration or input data; the message names the offending field."""


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"--config: file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"--config: cannot parse {path}: {exc}") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError("--config: top level must be a mapping")
    unknown = set(doc) - TOP_KEYS
    if unknown:
        raise ConfigError(f"config: unknown key(s) {sorted(unknown)}")
    base = path.resolve().parent
    data = doc.get("data")
    if isinstance(data, dict) and "path" in data:
        data["path"] = str((base / data["path"]).resolve())
    if isinstance(doc.get("graph"), str):
        doc["graph"] = str((base / doc["graph"]).resolve())
    sim = doc.get("simulation")
    if isinstance(sim, dict) and sim.get("cov_file"):
        sim["cov_file"] = str((base / sim["cov_file"]).resolve())
    return doc


def _section(cfg: dict, key: str, allowed: set) -> dict:
    sec = cfg.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"config.{key} must be a mapping")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"config.{key}: unknown field(s) {sorted(unknown)}")
    return dict(sec)


def mcmc_config(cfg: dict, seed: Optional[int] = None, variant: Optional[str] = None) -> McmcConfig:
    sec = _section(cfg, "mcmc", MCMC_FIELDS)
    if seed is not None:
        sec["seed"] = seed
    try:
        mc = McmcConfig(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.mcmc: {exc}") from exc
    return variant_config(variant, mc) if variant else mc


def tune_grid(cfg: dict) -> TuneGrid:
    sec = _section(cfg, "tuning", TUNE_FIELDS)
    if "values" in sec:
        sec["values"] = tuple(sec["values"])
    try:
        return TuneGrid(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.tuning: {exc}") from exc


def resolve_variant(cfg: dict, override: Optional[str]) -> str:
    name = override or cfg.get("variant") or "mvn-mrf-ssb"
    try:
        return check_variant(name)
    except ValueError as exc:
        raise ConfigError(f"variant: {exc}") from exc


def resolve_threads(value: Optional[int]) -> int:
    if value is None:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if value < 1:
        raise ConfigError("--threads must be at least 1")
    return value


def parse_contrast(value) -> Optional[effects.ExposureContrast]:
    """``c`` (meaning ``c`` vs 0), ``"a,a_star"``, a two-element list or ``{a, a_star}``."""
    if value is None:
        return None
    try:
        if isinstance(value, dict):
            return effects.ExposureContrast(float(value["a"]), float(value["a_star"]))
        if isinstance(value, (list, tuple)):
            a, b = value
            return effects.ExposureContrast(float(a), float(b))
        if isinstance(value, str) and "," in value:
            a, b = value.split(",")
            return effects.ExposureContrast(float(a), float(b))
        return effects.ExposureContrast.of(float(value))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"contrast: cannot interpret {value!r}") from exc


# ---------------------------------------------------------------------------
# data ingestion


def _columns(spec, header, role, required=True) -> list:
    if spec is None:
        if required:
            raise ConfigError(f"config.data.{role} is required")
        return []
    names = [spec] if isinstance(spec, str) else list(spec)
    missing = [c for c in names if c not in header]
    if missing:
        raise ConfigError(f"config.data.{role}: column(s) {missing} not found in data header")
    return names


def load_dataset(cfg: dict) -> Dataset:
    """Read the delimited table named in ``config.data`` with declared column roles.

    Mediators are given either as an explicit list (``mediators``) or as a
    name prefix (``mediator_prefix``).
    """
    sec = _section(cfg, "data", {"path", "delimiter", "outcome", "exposure", "covariates",
                                 "mediators", "mediator_prefix", "standardize"})
    if "path" not in sec:
        raise ConfigError("config.data.path is required")
    path = Path(sec["path"])
    if not path.is_file():
        raise ConfigError(f"config.data.path: file not found: {path}")
    delim = sec.get("delimiter", ",")
    with open(path, newline="") as fh:
        header = [h.strip() for h in next(csv.reader(fh, delimiter=delim))]
    if len(set(header)) != len(header):
        raise ConfigError("config.data.path: duplicate column names in header")
    y = _columns(sec.get("outcome"), header, "outcome")
    a = _columns(sec.get("exposure"), header, "exposure")
    x = _columns(sec.get("covariates"), header, "covariates", required=False)
    if "mediators" in sec:
        m = _columns(sec["mediators"], header, "mediators")
    elif "mediator_prefix" in sec:
        m = [h for h in header if h.startswith(sec["mediator_prefix"]) and h not in y + a + x]
        if not m:
            raise ConfigError(f"config.data.mediator_prefix: no column starts with "
                              f"{sec['mediator_prefix']!r}")
    else:
        raise ConfigError("config.data.mediators or config.data.mediator_prefix is required")
    if len(y) != 1 or len(a) != 1:
        raise ConfigError("config.data: exactly one outcome and one exposure column")
    roles = y + a + x + m
    if len(set(roles)) != len(roles):
        raise ConfigError("config.data: a column is assigned to more than one role")
    idx = [header.index(c) for c in roles]
    try:
        table = np.loadtxt(path, delimiter=delim, skiprows=1, usecols=idx, ndmin=2)
    except ValueError as exc:
        raise ConfigError(f"config.data.path: non-numeric or missing value ({exc})") from exc
    family = cfg.get("family", "logit")
    try:
        data = Dataset(X=table[:, 2:2 + len(x)], A=table[:, 1], M=table[:, 2 + len(x):],
                       Y=table[:, 0], family=Family.parse(family), mediator_names=m)
    except ValueError as exc:
        raise ConfigError(f"config.data: {exc}") from exc
    if standardize_flag(cfg):
        data = standardize_mediators(data)[0]
    return data


def standardize_flag(cfg: dict) -> bool:
    """Mediator columns are scaled to unit variance unless ``data.standardize`` is false."""
    return bool((cfg.get("data") or {}).get("standardize", True))


def build_run_priors(cfg: dict, data: Dataset, variant: str) -> PriorConfig:
    overrides = _section(cfg, "priors", PRIOR_FIELDS)
    if variant != "mvn-mrf-ssb":
        overrides.pop("eta2_gamma", None)
    rho = float(cfg.get("rho_cut", DEFAULT_RHO_CUT))
    graph = None
    if variant == "mvn-mrf-ssb" and cfg.get("graph"):
        gpath = Path(cfg["graph"])
        if not gpath.is_file():
            raise ConfigError(f"config.graph: file not found: {gpath}")
        graph = MrfGraph.read_triplets(gpath, q=data.q)
    elif variant == "mvn-mrf-ssb" and cfg.get("signed_graph", False):
        graph = MrfGraph.from_mediators(data.M, rho_cut=rho, signed=True)
    try:
        return build_priors(data, variant, rho_cut=rho, graph=graph, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.priors: {exc}") from exc


# ---------------------------------------------------------------------------
# run directories


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, default=_jsonable))


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


def _out_dir(args, cfg: dict, default: str) -> Path:
    out = Path(args.out or cfg.get("out") or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_run(run_dir) -> tuple:
    """Chains and run manifest from a fit directory."""
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise ConfigError(f"run directory not found: {run_dir}")
    manifests = sorted((run_dir / "chains").glob("chain*.manifest.json"))
    if not manifests:
        raise ConfigError(f"{run_dir}: no chain manifests under chains/")
    chains = [ChainOutput.load(m) for m in manifests]
    qs = {c.q for c in chains}
    if len(qs) != 1:
        raise ConfigError(f"{run_dir}: chains disagree on the number of mediators {sorted(qs)}")
    run_path = run_dir / "run.json"
    run = json.loads(run_path.read_text()) if run_path.is_file() else {}
    return chains, run


def _print(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_tune(args) -> int:
    cfg = load_config(args.config)
    variant = resolve_variant(cfg, args.variant)
    if variant != "mvn-mrf-ssb":
        raise ConfigError(f"tune applies only to mvn-mrf-ssb; {variant} has no smoothness "
                          "parameter to choose")
    data = load_dataset(cfg)
    priors = build_run_priors(cfg, data, variant)
    mc = mcmc_config(cfg, args.seed, variant)
    grid = tune_grid(cfg)
    out = _out_dir(args, cfg, "medpath-tune")
    try:
        scan = phase_transition_scan(data, priors, grid, mc, threads=resolve_threads(args.threads))
    except ScanError as exc:
        exc.partial.write(out / "scan.csv")
        raise
    scan.write(out / "scan.csv")
    _write_json(out / "tune.json", {"eta2_gamma": scan.eta2, "no_transition": scan.no_transition,
                                     "eta_pt": scan.eta_pt, "tolerance": scan.tolerance,
                                     "summary": grid.summary, "seed": mc.seed})
    flag = " (no transition within grid)" if scan.no_transition else ""
    _print(f"eta2_gamma = {scan.eta2:g}{flag}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    variant = resolve_variant(cfg, args.variant)
    data = load_dataset(cfg)
    priors = build_run_priors(cfg, data, variant)
    mc = mcmc_config(cfg, args.seed, variant)
    threads = resolve_threads(args.threads if args.threads is not None else cfg.get("threads"))
    contrast = parse_contrast(args.contrast if args.contrast is not None else cfg.get("contrast"))
    if contrast is None:
        contrast = effects.ExposureContrast.from_exposure(data.A)
    cutoff = float(cfg.get("cutoff", 0.5))
    out = _out_dir(args, cfg, "medpath-run")

    scan = None
    tuned = variant == "mvn-mrf-ssb" and "eta2_gamma" not in (cfg.get("priors") or {})
    if tuned:
        scan = phase_transition_scan(data, priors, tune_grid(cfg), mc, threads=threads)
        scan.write(out / "scan.csv")
        priors = priors.with_eta2(scan.eta2)
    elif variant != "mvn-mrf-ssb":
        priors = priors.independent()
    if variant == "mvn-mrf-ssb":
        priors.mrf_graph.write_triplets(out / "graph.csv")

    chains = run_chains(data, priors, mc, threads=threads)
    for c, chain in enumerate(chains):
        chain.save(out / "chains", f"chain{c}", binary=bool(cfg.get("binary_draws", False)))

    resolved = dict(cfg)
    resolved["variant"] = variant
    resolved["mcmc"] = mc.to_dict()
    resolved["priors"] = {**(cfg.get("priors") or {}), "eta2_gamma": priors.eta2_gamma}
    resolved["contrast"] = {"a": contrast.a, "a_star": contrast.a_star}
    if variant == "mvn-mrf-ssb":
        resolved["graph"] = str((out / "graph.csv").resolve())
    (out / "config.yaml").write_text(yaml.safe_dump(resolved, sort_keys=True))

    report = diagnostics.geweke_report(chains)
    diagnostics.write_geweke(report, out / "geweke.csv")
    names = cfg.get("trace") or list(diagnostics.DEFAULT_MONITORED)
    diagnostics.write_trace(diagnostics.trace_export(chains, names), out / "trace.csv")
    summary = effects.decompose_effects(chains, contrast, cutoff)
    summary.write(out)

    _write_json(out / "run.json", {
        "variant": variant,
        "family": data.family.value,
        "n": data.n, "p": data.p, "q": data.q,
        "standardized": standardize_flag(cfg),
        "lambda_fixed_zero": mc.fix_lambda_zero,
        "eta2_gamma": priors.eta2_gamma,
        "eta2_tuned": tuned,
        "no_transition": None if scan is None else scan.no_transition,
        "contrast": {"a": contrast.a, "a_star": contrast.a_star, "c": contrast.c},
        "cutoff": cutoff,
        "chains": [f"chains/chain{c}.manifest.json" for c in range(len(chains))],
        "config_hashes": [ch.meta["config_hash"] for ch in chains],
        "geweke_failures": sum(not e.passed for e in report if e.defined),
    })
    _print(f"{variant}: {len(chains)} chain(s), {chains[0].n_draws} draws each -> {out}")
    _print(f"selected pathways: {int(summary.selected.sum())} of {data.q}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    chains, run = load_run(args.run_dir)
    contrast = parse_contrast(args.contrast)
    if contrast is None:
        contrast = parse_contrast(run.get("contrast", {"a": 1.0, "a_star": 0.0}))
    cutoff = float(run.get("cutoff", 0.5))
    summary = effects.decompose_effects(chains, contrast, cutoff)
    out = Path(args.out) if args.out else Path(args.run_dir)
    summary.write(out)
    doc = summary.to_dict()
    _print(f"contrast c = {summary.contrast:g}; {doc['n_selected']} pathway(s) with PPI > {cutoff:g}")
    for row in doc["mediators"]:
        if row["selected"]:
            _print(f"  {row['mediator']}: PPI {row['ppi']:.3f}, IE|selected {row['ie_cond_mean']:.4f}")
    de, te = doc["direct"]["log"], doc["total"]["log"]
    _print(f"  DE {de['mean']:.4f} (OR {np.exp(de['mean']):.3f}); "
           f"log TE {te['mean']:.4f} (OR {np.exp(te['mean']):.3f})")
    return EXIT_OK


def cmd_geweke(args) -> int:
    chains, _ = load_run(args.run_dir)
    names = args.parameters.split(",") if args.parameters else list(diagnostics.DEFAULT_MONITORED)
    try:
        report = diagnostics.geweke_report(chains, names)
        rows = diagnostics.trace_export(chains, names)
    except ValueError as exc:
        raise ConfigError(f"--parameters: {exc}") from exc
    out = Path(args.out) if args.out else Path(args.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    diagnostics.write_geweke(report, out / "geweke.csv")
    diagnostics.write_trace(rows, out / "trace.csv")
    defined = [e for e in report if e.defined]
    failed = [e for e in defined if not e.passed]
    _print(f"{len(defined)} defined z-scores, {len(failed)} with |z| >= {diagnostics.Z_CRIT:.2f}")
    for e in failed:
        _print(f"  chain {e.chain} {e.parameter}: z = {e.z:.2f}")
    return EXIT_OK


def scenario_spec(cfg: dict, args) -> simgen.ScenarioSpec:
    sec = _section(cfg, "simulation", SCENARIO_KEYS | {"scenario"})
    scenario = args.scenario or sec.pop("scenario", None)
    sec.pop("scenario", None)
    if scenario is None:
        raise ConfigError("--scenario is required")
    if args.replicates is not None:
        sec["replicates"] = args.replicates
    if args.seed is not None:
        sec["base_seed"] = args.seed
    n, q = sec.pop("n", None), sec.pop("q", None)
    try:
        return simgen.ScenarioSpec.make(scenario, n=n, q=q, **sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"scenario: {exc}") from exc


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    spec = scenario_spec(cfg, args)
    out = _out_dir(args, cfg, f"medpath-sim-{spec.scenario}")
    try:
        cov = simgen.scenario_covariance(spec)
    except ValueError as exc:
        raise ConfigError(f"scenario {spec.scenario}: {exc}") from exc
    for r in range(spec.replicates):
        data, truth = simgen.generate(spec, r, cov)
        simgen.write_dataset(data, truth, out, stem=f"rep{r:04d}")
    _write_json(out / "scenario.json", spec.to_dict())
    _print(f"scenario {spec.scenario}: {spec.replicates} dataset(s) -> {out}")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = load_config(args.config)
    spec = scenario_spec(cfg, args)
    names = args.variant.split(",") if args.variant else list(VARIANTS)
    for v in names:
        resolve_variant({}, v)
    mc = mcmc_config(cfg)
    if args.seed is not None:
        mc = replace(mc, seed=args.seed)
    out = _out_dir(args, cfg, f"medpath-study-{spec.scenario}")
    try:
        simgen.scenario_covariance(spec)
    except ValueError as exc:
        raise ConfigError(f"scenario {spec.scenario}: {exc}") from exc
    result = simgen.run_study(spec, mc, names, grid=tune_grid(cfg),
                              threads=resolve_threads(args.threads),
                              rho_cut=float(cfg.get("rho_cut", DEFAULT_RHO_CUT)),
                              cutoff=float(cfg.get("cutoff", 0.5)))
    result.write(out)
    table = simgen.format_table1(result)
    (out / "table1.txt").write_text(table + "\n")
    _write_json(out / "mcmc.json", mc.to_dict())
    _print(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medpath", description=(
        "Bayesian pathway selection for high-dimensional mediators with a GLM outcome."))
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="YAML or JSON run configuration")
        p.add_argument("--out", help="output directory")
        return p

    p = common(sub.add_parser("tune", help="choose eta2_gamma by the phase-transition scan"))
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--variant", help="must be mvn-mrf-ssb")
    p.set_defaults(func=cmd_tune)

    p = common(sub.add_parser("fit", help="run chains and write draws, diagnostics and effects"))
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--variant", help=", ".join(VARIANTS))
    p.add_argument("--contrast", help="c, or 'a,a_star'; default is the exposure IQR")
    p.set_defaults(func=cmd_fit)

    p = common(sub.add_parser("summarize", help="PPI, selection and effects from a fit directory"),
               config=False)
    p.add_argument("run_dir")
    p.add_argument("--contrast", help="c, or 'a,a_star'; default is the contrast stored at fit time")
    p.set_defaults(func=cmd_summarize)

    p = common(sub.add_parser("geweke", help="Geweke z-scores and trace table for a fit"),
               config=False)
    p.add_argument("run_dir")
    p.add_argument("--parameters", help="comma-separated names, e.g. loglik,sigma2,tau[3]")
    p.set_defaults(func=cmd_geweke)

    p = common(sub.add_parser("simulate", help="write simulated datasets with their truth"))
    p.add_argument("--scenario", choices=simgen.SCENARIOS)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int, help="base seed; replicate r uses seed + r")
    p.set_defaults(func=cmd_simulate)

    p = common(sub.add_parser("study", help="replicated simulation study with operating characteristics"))
    p.add_argument("--scenario", choices=simgen.SCENARIOS)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int, help="chain seed; replicate r uses seed + r")
    p.add_argument("--threads", type=int)
    p.add_argument("--variant", help="comma-separated subset of " + ", ".join(VARIANTS))
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("scenario", "replicates", "seed", "variant", "contrast", "threads"):
        args.__dict__.setdefault(name, None)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SamplerError, ScanError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
