"""Command-line interface: ``nsi estimate | simulate | compare | diagnose``.

Every subcommand reads an optional TOML config; command-line flags override
file values. Outputs are deterministic functions of the config and the input
files. Errors are written to stderr as a JSON object and mapped to exit
codes 1 (internal or numerical), 2 (configuration) and 3 (data validation).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import wsi_estimate
from .basis import BasisSpec
from .bridge import PHI_SPEC, W_SPEC, HyperParams
from .data import ColumnRoles, load_csv, validate_roles
from .diagnostics import WEAK_THRESHOLD, build_report, completeness_rank_check
from .estimator import NSIEstimator
from .exceptions import ConfigError, NSIError, SchemaError
from .gmm import WEIGHTINGS, wald_statistic
from .scores import fits_to_dict
from .simulation import (
    SIMULATION_NSI_PARAMS, TABLE1_ORDER, DgpSpec, index_runner, nsi_runner, replications_csv,
    run_monte_carlo, summarize_table1, wsi_runner,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger("nsi")

SCHEMA_VERSION = "1.0"
VARIANT_BASES = {
    "series": PHI_SPEC,
    "kernel": BasisSpec(kind="kernel_nystrom"),
    "tree": BasisSpec(kind="tree_leaf"),
}
ESTIMATE_VARIANTS = ("series", "kernel", "tree", "wsi")
HYPER_KEYS = ("mu", "gamma_phi", "gamma_q", "gamma_xi", "ridge_q", "penalty_rate")


# -- config -------------------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        with p.open("rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc


def _section(cfg, name) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _resolve_common(cfg, args, command) -> dict:
    """Merge file values and flags into one flat, fully explicit config."""
    sec = _section(cfg, command)
    seed = args.seed if args.seed is not None else cfg.get("seed", sec.get("seed"))
    if seed is None:
        raise ConfigError("a seed is required (--seed or 'seed' in the config)")
    out = args.out or cfg.get("out") or sec.get("out")
    if out is None:
        raise ConfigError("an output directory is required (--out or 'out' in the config)")
    folds = args.folds if args.folds is not None else sec.get("folds", cfg.get("folds", 5))
    weighting = args.weighting or sec.get("weighting", cfg.get("weighting", "efficient"))
    if weighting not in WEIGHTINGS:
        raise ConfigError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    hyper = _section(cfg, "hyper")
    unknown = set(hyper) - set(HYPER_KEYS)
    if unknown:
        raise ConfigError(f"unknown hyperparameters {sorted(unknown)}")
    return {"seed": int(seed), "out": str(out), "folds": int(folds), "weighting": weighting,
            "hyper": {**{k: hyper.get(k) for k in HYPER_KEYS}, "penalty_rate": hyper.get("penalty_rate", "inverse_n")}}


def _embedded(common) -> dict:
    # the output location is not part of the result; leaving it out keeps
    # reports byte-identical across output directories
    return {k: v for k, v in common.items() if k != "out"}


def _estimator_list(args, sec, default, allowed):
    raw = args.estimators if args.estimators is not None else sec.get("estimators", list(default))
    if isinstance(raw, str):
        raw = [s for s in raw.split(",") if s.strip()]
    names = []
    lookup = {a.lower(): a for a in allowed}
    for r in raw:
        key = r.strip().lower()
        if key not in lookup:
            raise ConfigError(f"unknown estimator {r!r}; choose from {list(allowed)}")
        if lookup[key] not in names:
            names.append(lookup[key])
    if not names:
        raise ConfigError("estimator set is empty")
    return names


def _basis_specs(cfg) -> dict:
    sec = _section(cfg, "basis")
    specs = {}
    for name, default in {**VARIANT_BASES, "critic": W_SPEC}.items():
        over = sec.get(name, {})
        specs[name] = BasisSpec.from_dict({**default.to_dict(), **over})
    unknown = set(sec) - set(specs)
    if unknown:
        raise ConfigError(f"unknown basis sections {sorted(unknown)}")
    return specs


def _load_data(cfg, base_dir):
    data = _section(cfg, "data")
    if "path" not in data:
        raise ConfigError("[data] path is required")
    path = Path(data["path"])
    if not path.is_absolute():
        path = base_dir / path
    if not path.is_file():
        raise ConfigError(f"data file not found: {path}")
    roles = ColumnRoles.from_dict(_section(cfg, "roles"))
    pi = _section(cfg, "pi")
    ds = load_csv(path, roles, pi=pi or None)
    return ds, {"path": str(data["path"]), "roles": roles.to_dict(), "pi": dict(pi)}


# -- output helpers -------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(payload), indent=2, allow_nan=False) + "\n", encoding="utf-8")


def _stars(p):
    if p is None or not math.isfinite(p):
        return ""
    return "***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.10 else ""


# -- estimate -------------------------------------------------------------------

def _nsi_variant(ds, variant, common, specs, regressors, pooling, from_fits=None):
    est = NSIEstimator(phi_basis=specs[variant], w_basis=specs["critic"], n_folds=common["folds"],
                       regressors=regressors, weighting=common["weighting"], pooling=pooling,
                       random_state=common["seed"], **common["hyper"])
    if from_fits is not None:
        est.fit_from_fits(ds, from_fits)
    else:
        est.fit(ds)
    return est


def _resolved_hyper(scores) -> dict:
    out = {}
    for f in scores.fits:
        for m, d in f["measurements"].items():
            out.setdefault(m, []).append(d["bridge"].hyper.to_dict())
    return out


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    base = Path(args.config).parent if args.config else Path.cwd()
    common = _resolve_common(cfg, args, "estimate")
    sec = _section(cfg, "estimate")
    variants = _estimator_list(args, sec, ESTIMATE_VARIANTS, ESTIMATE_VARIANTS)
    ds, data_cfg = _load_data(cfg, base)
    regressors = sec.get("regressors", "regression" if len(ds.roles.treatments) != 1 else "ht")
    pooling = sec.get("pooling", "joint")
    wsi_instrument = sec.get("wsi_instrument")
    specs = _basis_specs(cfg)
    stored = None
    if args.from_fit:
        stored = json.loads(Path(args.from_fit).read_text(encoding="utf-8"))
        if stored.get("schema_version") != SCHEMA_VERSION:
            raise SchemaError(f"{args.from_fit} has an unsupported schema version")

    out_dir = Path(common["out"])
    rows = list(ds.roles.treatments)
    cells = {r: {} for r in rows}
    estimators, diagnostics, fits_out = {}, {}, {}
    score_frames = []
    for v in variants:
        if v == "wsi":
            est, index = wsi_estimate(ds, instrument=wsi_instrument, regressors=regressors)
            entry = est.to_dict()
            entry["lambdas"] = dict(zip(ds.measurement_names, index.lambdas.tolist()))
        else:
            if stored is not None and v not in stored["variants"]:
                raise SchemaError(f"stored fits have no variant {v!r}")
            fits = stored["variants"][v] if stored is not None else None
            nsi = _nsi_variant(ds, v, common, specs, regressors, pooling, fits)
            est = nsi.estimate_
            entry = est.to_dict()
            entry["basis"] = specs[v].to_dict()
            entry["resolved_hyper"] = _resolved_hyper(nsi.scores_)
            diagnostics[v] = build_report(ds, nsi.scores_).to_dict()
            fits_out[v] = fits_to_dict(nsi.scores_.fits)
            frame = nsi.scores_.to_frame()
            if not score_frames:
                score_frames.append(frame[["unit", "fold"]])
            score_frames.append(frame.drop(columns=["unit", "fold"]).add_prefix(f"{v}:"))
        estimators[v] = entry
        p = est.p_values()
        for r in rows:
            i = est.coef_index(r)
            cells[r][v] = {"estimate": float(est.beta[i]), "se": float(est.se[i]),
                           "p_value": float(p[i]), "stars": _stars(float(p[i]))}
        if est.J_stat is not None:
            cells.setdefault("_J", {})[v] = {"J_stat": est.J_stat, "df": est.df,
                                             "p_value": est.J_pvalue}

    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "estimate",
        "version": __version__,
        "config": {**_embedded(common), "data": data_cfg, "regressors": regressors, "pooling": pooling,
                   "estimators": variants, "wsi_instrument": wsi_instrument,
                   "basis": {k: s.to_dict() for k, s in specs.items()},
                   "from_fit": args.from_fit},
        "data": {"n": ds.n, "n_dropped": ds.n_dropped, "summary": validate_roles(ds)},
        "table": {"rows": rows, "columns": variants,
                  "cells": {r: cells[r] for r in rows},
                  "J_test": cells.get("_J", {})},
        "estimators": estimators,
        "diagnostics": diagnostics,
    }
    write_json(out_dir / "report.json", report)
    if fits_out:
        write_json(out_dir / "fits.json", {"schema_version": SCHEMA_VERSION, "variants": fits_out})
    if score_frames:
        import pandas as pd
        pd.concat(score_frames, axis=1).to_csv(out_dir / "scores.csv", index=False,
                                               float_format="%.10g", lineterminator="\n")
    return 0


# -- simulate -------------------------------------------------------------------

def _simulation_estimators(names, common, sim_sec, specs_override):
    nsi_params = dict(SIMULATION_NSI_PARAMS)
    if specs_override is not None:
        nsi_params["phi_basis"] = specs_override
    nsi_params.update(n_folds=common["folds"], weighting=common["weighting"], **common["hyper"])
    inst = sim_sec.get("wsi_instrument")
    table = {
        "PCA": lambda: index_runner("pca"),
        "ICW": lambda: index_runner("icw"),
        "WSI": lambda: wsi_runner(inst),
        "NSI": lambda: nsi_runner(**nsi_params),
    }
    return {k: table[k]() for k in names}, nsi_params


def gap_histogram_csv(results, bins=20) -> str:
    """Counts of study gaps per estimator on common bin edges."""
    gaps = {k: np.array([r["gap"] for r in v.ok]) for k, v in results.items()}
    pooled = np.concatenate([g for g in gaps.values()]) if gaps else np.empty(0)
    edges = np.histogram_bin_edges(pooled if pooled.size else np.zeros(1), bins=bins)
    lines = ["estimator,bin_left,bin_right,count"]
    for k, g in gaps.items():
        counts, _ = np.histogram(g, bins=edges)
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            lines.append(f"{k},{lo:.12g},{hi:.12g},{int(c)}")
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    common = _resolve_common(cfg, args, "simulate")
    sec = _section(cfg, "simulate")
    reps = args.reps if args.reps is not None else sec.get("reps", 300)
    names = _estimator_list(args, sec, TABLE1_ORDER, TABLE1_ORDER)
    spec = DgpSpec.from_dict(_section(sec, "dgp") if "dgp" in sec else {})
    nsi_basis = sec.get("nsi_basis")
    nsi_basis = None if nsi_basis is None else BasisSpec.from_dict(nsi_basis)
    estimators, nsi_params = _simulation_estimators(names, common, sec, nsi_basis)
    n_jobs = int(args.jobs if args.jobs is not None else sec.get("n_jobs", 1))
    results = run_monte_carlo(spec, estimators, int(reps), common["seed"], n_jobs=n_jobs)

    out_dir = Path(common["out"])
    cfg_out = {**_embedded(common), "reps": int(reps), "estimators": names, "dgp": spec.to_dict(),
               "wsi_instrument": sec.get("wsi_instrument"),
               "nsi": {k: (v.to_dict() if isinstance(v, BasisSpec) else v) for k, v in nsi_params.items()}}
    table = summarize_table1(results)
    write_json(out_dir / "table1.json", {
        "schema_version": SCHEMA_VERSION, "command": "simulate", "version": __version__,
        "config": cfg_out, "true_alte": spec.true_alte, "table": table,
        "aggregates": {k: v.aggregates() for k, v in results.items()},
    })
    out_dir.joinpath("replications.csv").write_text(replications_csv(results), encoding="utf-8")
    out_dir.joinpath("gap_histogram.csv").write_text(
        gap_histogram_csv(results, int(sec.get("histogram_bins", 20))), encoding="utf-8")
    return 0


# -- compare --------------------------------------------------------------------

def _read_report(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"report not found: {p}")
    try:
        rep = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{p} is not valid JSON: {exc}") from exc
    if "estimators" not in rep:
        raise SchemaError(f"{p} has no 'estimators' section")
    return rep


def compare_reports(rep_a, rep_b, coefficient) -> dict:
    shared = [v for v in rep_a["estimators"] if v in rep_b["estimators"]]
    out = {"coefficient": coefficient, "comparisons": {}, "warnings": []}
    if not shared:
        msg = "the two reports share no estimator variant"
        logger.warning(msg)
        out["warnings"].append(msg)
        return out
    for v in shared:
        ca = rep_a["estimators"][v].get("coefficients", {})
        cb = rep_b["estimators"][v].get("coefficients", {})
        if coefficient not in ca or coefficient not in cb:
            raise SchemaError(f"coefficient {coefficient!r} missing from variant {v!r}")
        a, b = ca[coefficient], cb[coefficient]
        res = wald_statistic(a["estimate"], a["se"], b["estimate"], b["se"])
        out["comparisons"][v] = {"estimate_A": a["estimate"], "se_A": a["se"],
                                 "estimate_B": b["estimate"], "se_B": b["se"], **res}
    return out


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    sec = _section(cfg, "compare")
    a = args.report_a or sec.get("report_a")
    b = args.report_b or sec.get("report_b")
    coefficient = args.coefficient or sec.get("coefficient")
    if not (a and b and coefficient):
        raise ConfigError("compare needs two reports and a coefficient")
    out = args.out or cfg.get("out") or sec.get("out")
    if out is None:
        raise ConfigError("an output directory is required (--out or 'out' in the config)")
    res = compare_reports(_read_report(a), _read_report(b), coefficient)
    write_json(Path(out) / "comparison.json", {
        "schema_version": SCHEMA_VERSION, "command": "compare", "version": __version__,
        "config": {"report_a": str(a), "report_b": str(b), "coefficient": coefficient},
        **res,
    })
    return 0


# -- diagnose -------------------------------------------------------------------

def cmd_diagnose(args) -> int:
    cfg = load_config(args.config)
    sec = _section(cfg, "diagnose")
    table = sec.get("completeness_table")
    has_data = "data" in cfg
    if not has_data and table is None:
        raise ConfigError("diagnose needs [data] and roles, or [diagnose] completeness_table")
    payload = {"schema_version": SCHEMA_VERSION, "command": "diagnose", "version": __version__}
    if has_data:
        base = Path(args.config).parent if args.config else Path.cwd()
        common = _resolve_common(cfg, args, "diagnose")
        ds, data_cfg = _load_data(cfg, base)
        variant = sec.get("basis", "series")
        if variant not in VARIANT_BASES:
            raise ConfigError(f"diagnose basis must be one of {list(VARIANT_BASES)}")
        specs = _basis_specs(cfg)
        regressors = sec.get("regressors", "regression" if len(ds.roles.treatments) != 1 else "ht")
        threshold = float(sec.get("weak_threshold", WEAK_THRESHOLD))
        nsi = _nsi_variant(ds, variant, common, specs, regressors, "joint")
        report = build_report(ds, nsi.scores_, completeness_table=table, threshold=threshold)
        payload["config"] = {**_embedded(common), "data": data_cfg, "basis": variant, "regressors": regressors,
                             "weak_threshold": threshold, "completeness_table": table}
        payload["data"] = validate_roles(ds)
        payload["diagnostics"] = report.to_dict()
    else:
        out = args.out or cfg.get("out") or sec.get("out")
        if out is None:
            raise ConfigError("an output directory is required (--out or 'out' in the config)")
        common = {"out": str(out)}
        payload["config"] = {"completeness_table": table}
        payload["diagnostics"] = {"completeness": completeness_rank_check(table)}
    write_json(Path(common["out"]) / "diagnostics.json", payload)
    return 0


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, reps=False):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--folds", type=int)
        p.add_argument("--estimators", help="comma-separated estimator list")
        p.add_argument("--weighting", choices=WEIGHTINGS)
        if reps:
            p.add_argument("--reps", type=int)
            p.add_argument("--jobs", type=int, help="parallel workers for replications")
        return p

    p = common(sub.add_parser("estimate", help="estimate treatment effects on the latent outcome"))
    p.add_argument("--from-fit", help="fits.json from an earlier run; skips first-stage fitting")
    p.set_defaults(func=cmd_estimate)
    common(sub.add_parser("simulate", help="two-study Monte Carlo comparison"), reps=True).set_defaults(
        func=cmd_simulate)
    p = sub.add_parser("compare", help="Wald test of equal effects between two reports")
    p.add_argument("report_a", nargs="?")
    p.add_argument("report_b", nargs="?")
    p.add_argument("--coefficient")
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    common(sub.add_parser("diagnose", help="first-stage identification diagnostics")).set_defaults(
        func=cmd_diagnose)
    return parser


def _error_payload(exc, code, kind) -> str:
    return json.dumps({"error": {"kind": kind, "type": type(exc).__name__, "message": str(exc),
                                 "exit_code": code}})


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", UserWarning)
            return args.func(args)
    except NSIError as exc:
        print(_error_payload(exc, exc.exit_code, exc.kind), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(_error_payload(exc, 2, "config"), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(_error_payload(exc, 1, "internal"), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
