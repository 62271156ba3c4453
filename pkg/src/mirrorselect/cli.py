"""Command-line interface: selection on CSV data, simulation studies, ATE.

Three subcommands share a flag vocabulary: ``select`` runs an
FDR-calibrated selection on a delimited table, ``simulate`` runs a seeded
replication study of a synthetic scenario, and ``ate`` estimates the
average treatment effect after an optional selection step. Every command
writes a machine-readable JSON report embedding the complete effective
configuration (so any report can be reproduced byte-for-byte by rerunning
it) plus an aligned-text summary. Exit codes: 0 success, 2 configuration
error, 3 data/schema error, 4 method failure.
"""

import argparse
import dataclasses
import json
import math
import sys

import numpy as np
import pandas as pd

from . import __version__
from .baselines import marginal_qvalues, qvalue_select, uit_iut_pvalues
from .causal import ESTIMATORS, bootstrap_ci, estimate_ate
from .estimation import Dataset, EstimationError, fit_dual
from .mirrors import SelectorConfig, ds_select, mds_select
from .simulation import MethodSpec, ScenarioSpec, run_study

SCHEMA_VERSION = 1

CRITERION_TOKENS = {"or": "union", "and": "minimal"}
METHOD_TOKENS = ("ds", "mds", "paired", "unified", "bhq", "byq")

PRESETS = {
    "random-gaussian": {"n": 1000, "p": 100, "family": "gaussian", "x_dist": "gaussian",
                        "coef_mode": "random-signs"},
    "random-binary-outcome": {"n": 1000, "p": 100, "family": "binomial", "x_dist": "gaussian",
                              "coef_mode": "random-signs"},
    "lowdim-fixed-gaussian": {"n": 1000, "p": 90, "family": "gaussian", "x_dist": "gaussian",
                              "coef_mode": "fixed-table"},
    "lowdim-fixed-binary-x": {"n": 1000, "p": 90, "family": "gaussian", "x_dist": "binary",
                              "coef_mode": "fixed-table"},
    "highdim-fixed-p500": {"n": 1000, "p": 500, "family": "gaussian", "x_dist": "gaussian",
                           "coef_mode": "fixed-table"},
    "highdim-fixed-p1000": {"n": 1000, "p": 1000, "family": "gaussian", "x_dist": "gaussian",
                            "coef_mode": "fixed-table"},
    "highdim-fixed-p1500": {"n": 1000, "p": 1500, "family": "gaussian", "x_dist": "gaussian",
                            "coef_mode": "fixed-table"},
}


class ConfigError(Exception):
    """Bad configuration: unknown keys, invalid values, unusable combinations."""


class SchemaError(Exception):
    """Input data does not match the expected table schema."""


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mirrorselect",
        description="FDR-controlled confounder selection and ATE estimation",
    )
    parser.add_argument("--version", action="version", version=f"mirrorselect {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input):
        if needs_input:
            p.add_argument("--input", required=True, help="CSV file with a header row")
        p.add_argument("--config", help="JSON config file (or a previous report to rerun)")
        p.add_argument("--output", required=True, help="output path for the report")
        p.add_argument("--q", type=float, default=None, help="designated FDR level in (0,1)")
        p.add_argument("--criterion", choices=sorted(CRITERION_TOKENS), default=None,
                       help="selection criterion: 'or' (union set) or 'and' (minimal set)")
        p.add_argument("--method", choices=METHOD_TOKENS, default=None)
        p.add_argument("--backend", default=None,
                       help="estimation backend: mle, lasso, crossfit (bhq/byq also accept marginal)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--repeats", type=int, default=None,
                       help="splits for mds (select/ate) or replications (simulate)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: MIRRORSELECT_THREADS or all cores)")

    ps = sub.add_parser("select", help="run confounder selection on a CSV table")
    common(ps, needs_input=True)

    pa = sub.add_parser("ate", help="estimate the average treatment effect")
    common(pa, needs_input=True)
    pa.add_argument("--estimator", choices=ESTIMATORS, default=None)
    pa.add_argument("--bootstrap", type=int, default=None, metavar="N",
                    help="percentile bootstrap iterations for a confidence interval")

    pm = sub.add_parser("simulate", help="run a seeded replication study")
    common(pm, needs_input=False)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already reported; normalize the code
        return 0 if exc.code in (0, None) else 2
    try:
        if args.command == "select":
            return cmd_select(args)
        if args.command == "ate":
            return cmd_ate(args)
        return cmd_simulate(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SchemaError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except EstimationError as exc:
        print(f"method failure: {exc}", file=sys.stderr)
        return 4


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    if "schema_version" in cfg and "config" in cfg:
        cfg = cfg["config"]  # rerunning a previous report
    return cfg


def _effective_config(args, file_cfg, defaults, allowed):
    """Merge defaults < config file < command-line flags; reject unknown keys."""
    for key in file_cfg:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r}")
    cfg = dict(defaults)
    cfg.update(file_cfg)
    for key in allowed:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    return cfg


def _check_q(cfg):
    q = cfg["q"]
    if not isinstance(q, (int, float)) or not 0 < q < 1:
        raise ConfigError(f"q must lie strictly between 0 and 1, got {q}")
    cfg["q"] = float(q)


def _load_table(path, cfg):
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise SchemaError(f"input file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise SchemaError(f"cannot parse {path}: {exc}")
    ycol, acol = cfg["outcome"], cfg["treatment"]
    for col in (ycol, acol):
        if col not in df.columns:
            raise SchemaError(f"missing required column {col!r}")
    covars = [c for c in df.columns if c not in (ycol, acol)]
    if not covars:
        raise SchemaError("no covariate columns besides the outcome and treatment")
    bad = df.isna()
    if bad.values.any():
        row = int(bad.any(axis=1).idxmax())
        col = bad.columns[int(bad.loc[row].values.argmax())]
        raise SchemaError(f"missing value at row {row + 2} (1-based with header), column {col!r}")
    nonnum = [c for c in df.columns if not np.issubdtype(df[c].dtype, np.number)]
    if nonnum:
        raise SchemaError(f"non-numeric column {nonnum[0]!r}")
    avals = df[acol].to_numpy(dtype=float)
    if not np.isin(avals, (0.0, 1.0)).all():
        raise SchemaError(f"treatment column {acol!r} must contain only 0/1 values")
    yvals = df[ycol].to_numpy(dtype=float)
    if cfg["family"] not in ("gaussian", "binomial", "gaussian-identity", "binomial-logit"):
        raise ConfigError(f"unknown family {cfg['family']!r}")
    if cfg["family"].startswith("binomial") and not np.isin(yvals, (0.0, 1.0)).all():
        raise SchemaError(f"binomial outcome column {ycol!r} must contain only 0/1 values")
    data = Dataset(y=yvals, a=avals, x=df[covars].to_numpy(dtype=float), family=cfg["family"])
    return data, covars


def _run_selection(data, cfg):
    method = cfg["method"]
    criterion = CRITERION_TOKENS[cfg["criterion"]]
    q, seed, repeats = cfg["q"], cfg["seed"], cfg["repeats"]
    if method in ("ds", "mds", "unified", "paired"):
        if cfg["backend"] not in ("mle", "lasso", "crossfit"):
            raise ConfigError(f"mirror selection needs backend mle, lasso or crossfit, got {cfg['backend']!r}")
        mirror = "paired" if method == "paired" else "unified"
        sel_cfg = SelectorConfig(criterion=criterion, mirror=mirror, backend=cfg["backend"], q=q)
        if method == "ds":
            result = ds_select(data, sel_cfg, split_seed=seed)
            return result, None
        result, rates = mds_select(data, sel_cfg, repeats=repeats, base_seed=seed,
                                   threads=cfg.get("_threads"))
        return result, rates
    if method in ("bhq", "byq"):
        source = cfg["backend"]
        if source == "mle":
            pv = uit_iut_pvalues(fit_dual(data, "mle"), source="joint-mle")
        elif source == "crossfit":
            pv = uit_iut_pvalues(fit_dual(data, "crossfit", seed=seed), source="crossfit")
        elif source == "marginal":
            pv = marginal_qvalues(data)
        else:
            raise ConfigError(
                f"p-value baselines need backend mle, crossfit or marginal, got {source!r}")
        return qvalue_select(pv, q, criterion, "bh" if method == "bhq" else "by"), None
    raise ConfigError(f"unknown method {cfg['method']!r}")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_safe(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float):
        return None if not math.isfinite(obj) else obj
    return obj


def _write_report(path, report):
    text = json.dumps(_json_safe(report), sort_keys=True, indent=2) + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def _summary_path(path):
    return (path[: -len(".json")] if path.endswith(".json") else path) + ".txt"


def _write_summary(path, lines):
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _kv_lines(title, pairs):
    width = max(len(k) for k, _ in pairs)
    lines = [title, "=" * len(title)]
    lines += [f"{k.ljust(width)}  {v}" for k, v in pairs]
    return lines


SELECT_DEFAULTS = {
    "outcome": "y", "treatment": "a", "family": "gaussian",
    "q": 0.1, "criterion": "or", "method": "mds", "backend": "mle",
    "seed": 0, "repeats": 30,
}
SELECT_KEYS = ("input", "outcome", "treatment", "family", "q", "criterion",
               "method", "backend", "seed", "repeats")


def cmd_select(args):
    file_cfg = _load_config_file(args.config)
    cfg = _effective_config(args, file_cfg, SELECT_DEFAULTS, SELECT_KEYS)
    _check_q(cfg)
    cfg["input"] = cfg.get("input") or args.input
    data, covars = _load_table(cfg["input"], cfg)
    cfg["_threads"] = args.threads
    try:
        result, rates = _run_selection(data, cfg)
    finally:
        cfg.pop("_threads", None)
    names = [covars[j] for j in result.selected]
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "select",
        "config": cfg,
        "result": {
            "selected": names,
            "selected_indices": result.selected,
            "n_selected": result.n_selected,
            "threshold": result.threshold,
            "fdp_bound": result.fdp_bound,
            "method": result.method,
            "criterion": result.criterion,
            "q": result.q,
            "inclusion_rates": None if rates is None else rates.rates,
        },
    }
    _write_report(args.output, report)
    pairs = [("method", result.method), ("criterion", cfg["criterion"]),
             ("backend", cfg["backend"]), ("q", result.q),
             ("threshold", f"{result.threshold:.6g}"),
             ("fdp_bound", f"{result.fdp_bound:.6g}"),
             ("seed", cfg["seed"]),
             ("selected", f"({result.n_selected}) " + " ".join(names))]
    _write_summary(_summary_path(args.output), _kv_lines("confounder selection report", pairs))
    return 0


ATE_DEFAULTS = {**SELECT_DEFAULTS, "estimator": "aipw", "bootstrap": 0,
                "selected_columns": None, "level": 0.95, "adjust_with_selection": True}
ATE_KEYS = SELECT_KEYS + ("estimator", "bootstrap", "selected_columns", "level")


def cmd_ate(args):
    file_cfg = _load_config_file(args.config)
    cfg = _effective_config(args, file_cfg, ATE_DEFAULTS, ATE_KEYS)
    _check_q(cfg)
    if not 0 < cfg["level"] < 1:
        raise ConfigError(f"level must lie in (0,1), got {cfg['level']}")
    cfg["input"] = cfg.get("input") or args.input
    data, covars = _load_table(cfg["input"], cfg)
    estimator = cfg["estimator"]
    index_of = {c: j for j, c in enumerate(covars)}

    if cfg["selected_columns"] is not None:
        unknown = [c for c in cfg["selected_columns"] if c not in index_of]
        if unknown:
            raise SchemaError(f"selected-set column {unknown[0]!r} not present in the input")

        def pipeline(d):
            idx = [index_of[c] for c in cfg["selected_columns"]]
            return estimate_ate(d, idx, estimator)
    elif estimator == "unadjusted":
        def pipeline(d):
            return estimate_ate(d, [], estimator)
    else:
        cfg["_threads"] = None  # selection inside the pipeline stays single-threaded

        def pipeline(d):
            result, _ = _run_selection(d, cfg)
            return estimate_ate(d, result.selected, estimator)

    try:
        if cfg["bootstrap"]:
            est = bootstrap_ci(data, pipeline, n_boot=cfg["bootstrap"], level=cfg["level"],
                               seed=cfg["seed"], threads=args.threads)
        else:
            est = pipeline(data)
    except EstimationError:
        raise
    except ValueError as exc:
        raise EstimationError(str(exc))
    finally:
        cfg.pop("_threads", None)
    names = [covars[j] for j in est.selected]
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "ate",
        "config": cfg,
        "result": {
            "estimate": est.estimate,
            "estimator": est.estimator,
            "selected": names,
            "ci_lower": est.ci_lower,
            "ci_upper": est.ci_upper,
            "n_boot": est.n_boot,
        },
    }
    _write_report(args.output, report)
    ci = "-" if est.ci_lower is None else f"[{est.ci_lower:.6g}, {est.ci_upper:.6g}]"
    pairs = [("estimator", est.estimator), ("estimate", f"{est.estimate:.6g}"),
             ("ci", ci), ("n_boot", est.n_boot or 0),
             ("adjusted for", f"({len(names)}) " + " ".join(names))]
    _write_summary(_summary_path(args.output), _kv_lines("treatment effect report", pairs))
    return 0


SIMULATE_DEFAULTS = {
    "preset": None, "n": None, "p": None, "family": None, "x_dist": None,
    "rho": None, "block_size": None, "coef_mode": None, "n_both": None,
    "n_only_outcome": None, "n_only_treatment": None, "outcome_magnitude": None,
    "treatment_magnitude": None, "tau": None,
    "q": 0.1, "criterion": "or", "method": "ds", "backend": "mle",
    "seed": 0, "repeats": 10, "methods": None, "estimators": ("unadjusted", "aipw"),
    "mds_repeats": 30,
}
SIMULATE_KEYS = tuple(SIMULATE_DEFAULTS)
_SCENARIO_KEYS = ("n", "p", "family", "x_dist", "rho", "block_size", "coef_mode",
                  "n_both", "n_only_outcome", "n_only_treatment",
                  "outcome_magnitude", "treatment_magnitude", "tau")


def expand_scenario(cfg):
    """Scenario keyword dict from a preset name plus explicit overrides."""
    base = {}
    if cfg.get("preset") is not None:
        try:
            base = dict(PRESETS[cfg["preset"]])
        except KeyError:
            raise ConfigError(f"unknown preset {cfg['preset']!r}; available: {sorted(PRESETS)}")
    for key in _SCENARIO_KEYS:
        if cfg.get(key) is not None:
            base[key] = cfg[key]
    if "n" not in base:
        raise ConfigError("scenario needs at least n (directly or via a preset)")
    try:
        spec = ScenarioSpec(**base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}")
    return spec


def _default_methods(cfg):
    method, backend = cfg["method"], cfg["backend"]
    criterion = CRITERION_TOKENS[cfg["criterion"]]
    if method in ("ds", "mds", "unified", "paired"):
        mirror = "paired" if method == "paired" else "unified"
        selection = "ds" if method == "ds" else "mds"
        name = f"{selection}-{mirror}-{cfg['criterion']}"
        return [MethodSpec(name=name, kind="mirror", criterion=criterion, q=cfg["q"],
                           mirror=mirror, backend=backend, selection=selection,
                           repeats=cfg["mds_repeats"])]
    if method in ("bhq", "byq"):
        source = {"mle": "joint-mle", "crossfit": "crossfit", "marginal": "marginal"}.get(backend)
        if source is None:
            raise ConfigError(f"p-value baselines need backend mle, crossfit or marginal, got {backend!r}")
        return [MethodSpec(name=f"{method}-{backend}-{cfg['criterion']}", kind="qvalue",
                           criterion=criterion, q=cfg["q"], source=source,
                           adjust="bh" if method == "bhq" else "by")]
    raise ConfigError(f"unknown method {method!r}")


def _methods_from_config(cfg):
    if cfg["methods"] is None:
        return _default_methods(cfg)
    specs = []
    for i, entry in enumerate(cfg["methods"]):
        if not isinstance(entry, dict):
            raise ConfigError(f"methods[{i}] must be an object")
        entry = dict(entry)
        entry.setdefault("q", cfg["q"])
        if "criterion" in entry and entry["criterion"] in CRITERION_TOKENS:
            entry["criterion"] = CRITERION_TOKENS[entry["criterion"]]
        known = {f.name for f in dataclasses.fields(MethodSpec)}
        unknown = set(entry) - known
        if unknown:
            raise ConfigError(f"unknown method key {sorted(unknown)[0]!r} in methods[{i}]")
        try:
            specs.append(MethodSpec(**entry))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid methods[{i}]: {exc}")
    return specs


def cmd_simulate(args):
    file_cfg = _load_config_file(args.config)
    cfg = _effective_config(args, file_cfg, SIMULATE_DEFAULTS, SIMULATE_KEYS)
    _check_q(cfg)
    if cfg["repeats"] < 1:
        raise ConfigError("repeats must be >= 1")
    spec = expand_scenario(cfg)
    methods = _methods_from_config(cfg)
    try:
        report = run_study(spec, methods, n_reps=cfg["repeats"], base_seed=cfg["seed"],
                           estimators=tuple(cfg["estimators"]), threads=args.threads)
    except (ValueError, EstimationError) as exc:
        raise EstimationError(str(exc))

    base = args.output[: -len(".json")] if args.output.endswith(".json") else args.output
    echo = {
        "schema_version": SCHEMA_VERSION,
        "command": "simulate",
        "config": {**{k: v for k, v in cfg.items() if k != "methods"},
                   "scenario": dataclasses.asdict(spec),
                   "methods": [dataclasses.asdict(m) for m in report.methods]},
        "aggregates": report.aggregates,
    }
    _write_report(base + ".json", echo)
    with open(base + ".records.jsonl", "w") as fh:
        for rec in report.records:
            fh.write(json.dumps(_json_safe(rec), sort_keys=True) + "\n")

    lines = ["simulation study summary", "========================",
             f"scenario: n={spec.n} p={spec.p} family={spec.family} x={spec.x_dist} "
             f"coef={spec.coef_mode} rho={spec.rho} seed={cfg['seed']} reps={cfg['repeats']}", ""]
    metrics = ("fdp_union", "fdp_minimal", "power_union", "power_minimal",
               "power_only_treatment") + tuple(f"relative_bias_{e}" for e in report.estimators)
    header = "method".ljust(28) + "".join(m.rjust(22) for m in metrics)
    lines.append(header)
    for m in report.methods:
        row = m.name.ljust(28)
        for key in metrics:
            v = report.aggregates[m.name][key]["mean"]
            row += (f"{v:.4f}" if v == v else "nan").rjust(22)
        lines.append(row)
    _write_summary(base + ".summary.txt", lines)
    return 0


if __name__ == "__main__":
    sys.exit(main())
