"""Command-line entry point.

Every subcommand reads the same flat configuration: built-in defaults,
then an optional JSON config file, then dedicated flags, then ``--set
key=value`` overrides. Unknown keys are rejected. Usage and configuration
errors exit with status 2, data errors with status 1. A method that fails
on a dataset is reported as a FAIL row and does not stop the run.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import DataError, load_csv, load_schema, write_csv, write_schema
from .estimators import METHODS, MethodConfig, parse_methods, run_method
from .forest import Forest, ForestParams
from .gmice import GmiceParams, gmice_impute, pool_mean
from .simharness import ExperimentConfig, SurveySpec, run_experiment, synthetic_survey
from .tree import Tree, TreeParams

THREADS_ENV = "TREEIMPUTE_THREADS"


class UsageError(Exception):
    """Bad command line or configuration (exit status 2)."""


def _list_str(text):
    if isinstance(text, list):
        return [str(t) for t in text]
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _list_float(text):
    return [float(t) for t in (text if isinstance(text, list) else _list_str(text))]


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(conv):
    def parse(text):
        if text is None or str(text).strip().lower() in ("none", "null", ""):
            return None
        return conv(text)
    return parse


# key -> (parser, default, description); this table is the published config schema
CONFIG_SCHEMA = {
    "data": (_optional(str), None, "CSV file with the survey sample"),
    "schema": (_optional(str), None, "column kinds file (name = ordinal|categorical)"),
    "y": (str, "y", "target column"),
    "methods": (_list_str, ["SIM", "GCT", "GRT", "GCF", "GRF"], "comma-separated method ids"),
    "predictors": (_optional(_list_str), None, "predictor columns (default: all others)"),
    "seed": (int, 0, "master seed"),
    "output": (str, "treeimpute-out", "output directory"),
    "min_node_size": (int, 50, "single-tree minimum node size"),
    "max_depth": (_optional(int), None, "single-tree depth limit"),
    "max_surrogates": (int, 5, "surrogates kept per greedy split"),
    "n_bins": (int, 4, "quantile bins for ordinal chi-squared tests"),
    "forest_trees": (int, 500, "trees per forest"),
    "forest_min_node_size": (int, 5, "forest-tree minimum node size"),
    "propensity_floor": (float, 0.01, "lower clip for forest propensities"),
    "out_of_bag": (_bool, True, "use out-of-bag forest propensities"),
    "gmice_m": (int, 5, "GMICE imputations"),
    "gmice_iterations": (int, 10, "GMICE cycles per imputation"),
    "gmice_donor": (_bool, True, "GMICE draws donors within leaves"),
    "fractions": (_list_float, [0.05, 0.10, 0.25], "sampling fractions"),
    "trials": (int, 500, "simulation trials"),
    "step_trees": (int, 500, "trees in the population-generating forests"),
    "nonnegative": (_bool, True, "truncate generated y at zero"),
    "synth_n": (int, 4609, "synthetic rows"),
    "synth_ordinal": (int, 20, "synthetic ordinal predictors"),
    "synth_categorical": (int, 10, "synthetic categorical predictors"),
    "synth_y_missing": (float, 0.38, "synthetic y missing rate"),
    "synth_x_missing": (float, 0.1, "synthetic predictor missing rate"),
    "synth_y_independent": (_bool, False, "synthetic y ignores the predictors"),
    "synth_seed": (int, 1, "seed for the synthetic dataset"),
}


def default_config() -> dict:
    return {k: v[1] for k, v in CONFIG_SCHEMA.items()}


def _coerce(key, value):
    if key not in CONFIG_SCHEMA:
        raise UsageError(f"unknown config key {key!r}")
    try:
        return CONFIG_SCHEMA[key][0](value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value for {key!r}: {exc}") from None


def load_config(path: str | Path | None, overrides: dict | None = None,
                sets: list[str] | None = None) -> dict:
    """Merge defaults, a JSON config file, flag overrides and ``key=value`` strings."""
    cfg = default_config()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise UsageError(f"{path}: expected a JSON object")
        for k, v in doc.items():
            cfg[k] = _coerce(k, v)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = _coerce(k, v)
    for item in sets or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = _coerce(k.strip(), v)
    return cfg


def method_config(cfg: dict) -> MethodConfig:
    tree = TreeParams(min_node_size=cfg["min_node_size"], max_depth=cfg["max_depth"],
                      max_surrogates=cfg["max_surrogates"], n_bins=cfg["n_bins"])
    forest = ForestParams(cfg["forest_trees"], replace(tree, min_node_size=cfg["forest_min_node_size"],
                                                       max_depth=None), cfg["seed"])
    return MethodConfig(tree, forest, cfg["propensity_floor"], cfg["out_of_bag"], cfg["gmice_m"],
                        cfg["gmice_iterations"], cfg["gmice_donor"], cfg["seed"])


def survey_spec(cfg: dict) -> SurveySpec:
    return SurveySpec(n=cfg["synth_n"], p_ordinal=cfg["synth_ordinal"],
                      p_categorical=cfg["synth_categorical"], y_missing=cfg["synth_y_missing"],
                      x_missing=cfg["synth_x_missing"], y_independent=cfg["synth_y_independent"],
                      target=cfg["y"])


def load_data(cfg: dict):
    """The configured CSV sample, or a synthetic survey when no data path is set."""
    if cfg["data"] is None:
        return synthetic_survey(survey_spec(cfg), np.random.default_rng(cfg["synth_seed"]))
    if cfg["schema"] is None:
        raise UsageError("'data' needs a 'schema' file")
    return load_csv(cfg["data"], load_schema(cfg["schema"]))


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        try:
            n = int(os.environ.get(THREADS_ENV, "1"))
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer") from None
    if n < 1:
        raise UsageError("thread count must be at least 1")
    return n


def _money(x) -> str:
    return "FAIL" if x is None else f"{x:.2f}"


# -- subcommands -----------------------------------------------------------------


def cmd_estimate(args) -> int:
    cfg = load_config(args.config, {"data": args.data, "schema": args.schema, "y": args.y,
                                    "methods": args.method, "output": args.out, "seed": args.seed},
                      args.set)
    try:
        methods = parse_methods(",".join(cfg["methods"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data = load_data(cfg)
    mc = method_config(cfg)
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)

    def one(m):
        try:
            return m, run_method(m, data, cfg["y"], mc, cfg["predictors"]), ""
        except Exception as exc:  # reported as a FAIL row
            return m, None, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(_threads(args)) as pool:
        results = list(pool.map(one, methods))

    rows = []
    for m, res, err in results:
        if res is None:
            rows.append((m, None, None, err))
            (out / f"{m}.json").write_text(json.dumps({"method": m, "status": "FAIL", "error": err}))
            continue
        res.to_json(out / f"{m}.json")
        if args.save_model and isinstance(res.model, (Tree, Forest)):
            res.model.to_json(out / f"{m}.model.json")
        rows.append((m, res.estimate, res.seconds, ""))
    with open(out / "estimates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "estimate", "seconds"])
        for m, est, sec, _ in rows:
            w.writerow([m, "FAIL" if est is None else repr(est), "" if sec is None else f"{sec:.6f}"])
    print(f"{'method':<8}{'estimate':>14}{'seconds':>10}")
    for m, est, sec, err in rows:
        tail = f"  {err}" if err else ""
        print(f"{m:<8}{_money(est):>14}{'' if sec is None else f'{sec:.2f}':>10}{tail}")
    return 0


def cmd_impute(args) -> int:
    cfg = load_config(args.config, {"data": args.data, "schema": args.schema, "y": args.y,
                                    "output": args.out, "seed": args.seed, "gmice_m": args.m,
                                    "gmice_iterations": args.iterations}, args.set)
    data = load_data(cfg)
    if cfg["predictors"] is not None:
        data = data.select([cfg["y"]] + [p for p in cfg["predictors"] if p != cfg["y"]])
    mc = method_config(cfg)
    params = GmiceParams(cfg["gmice_m"], cfg["gmice_iterations"], mc.tree, cfg["seed"],
                         donor=cfg["gmice_donor"])
    chains = gmice_impute(data, params)
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    for c, chain in enumerate(chains, 1):
        chain.write(out / f"completed_{c}.csv")
    write_schema(data, out / "completed.schema")
    print(f"wrote {len(chains)} completed datasets to {out}")
    if cfg["y"] in data and data[cfg["y"]].is_ordinal:
        print(f"pooled mean of {cfg['y']}: {pool_mean(chains, cfg['y']):.2f}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, {"output": args.out, "trials": args.trials}, args.set)
    methods = []
    for m in cfg["methods"]:
        if m.upper() == "ORACLE":
            methods.append(("ORACLE", lambda sample, y, mu: mu))
        elif m.upper() in METHODS:
            methods.append(m.upper())
        else:
            raise UsageError(f"unknown method {m!r}; expected one of {', '.join(METHODS)} or ORACLE")
    data = load_data(cfg)
    if not cfg["fractions"] or any(not 0 < f <= 1 for f in cfg["fractions"]):
        raise UsageError("fractions must lie in (0, 1]")
    if cfg["trials"] < 1:
        raise UsageError("trials must be at least 1")
    mc = method_config(cfg)
    step = ForestParams(cfg["step_trees"], mc.forest.tree, cfg["seed"])
    config = ExperimentConfig(data, cfg["y"], tuple(methods), tuple(cfg["fractions"]), cfg["trials"],
                              cfg["seed"], None if cfg["predictors"] is None else tuple(cfg["predictors"]),
                              step, mc, cfg["nonnegative"])
    result = run_experiment(config, threads=_threads(args))
    paths = result.write(cfg["output"], plot_data=args.plot_data)
    print(f"{'method':<8}{'fraction':>9}{'bias':>12}{'rmse':>12}{'seconds':>10}")
    for r in result.reports:
        if r.failed:
            print(f"{r.method:<8}{r.fraction:>9.2f}{'FAIL':>12}{'FAIL':>12}{r.mean_seconds:>10.2f}")
        else:
            print(f"{r.method:<8}{r.fraction:>9.2f}{r.bias:>12.2f}{r.rmse:>12.2f}{r.mean_seconds:>10.2f}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.model)
    if not path.is_file():
        raise UsageError(f"model file not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("type") == "forest":
        forest = Forest.from_dict(doc)
        if not 0 <= args.tree < forest.n_trees:
            raise UsageError(f"--tree must lie in [0, {forest.n_trees - 1}]")
        print(f"{forest.kind} forest of {forest.n_trees} trees; tree {args.tree}:")
        tree = forest.trees[args.tree]
    elif doc.get("type") == "tree":
        tree = Tree.from_dict(doc)
    else:
        raise DataError(f"{path}: not a tree or forest model")
    print(tree.render())
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args.config, {"synth_n": args.n, "synth_seed": args.seed,
                                    "synth_y_independent": args.y_independent or None}, args.set)
    data = synthetic_survey(survey_spec(cfg), np.random.default_rng(cfg["synth_seed"]))
    out = Path(args.path)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(data, out)
    schema = out.with_suffix(".schema")
    write_schema(data, schema)
    print(f"wrote {data.n_rows} rows x {len(data.names)} columns to {out} (schema {schema})")
    return 0


# -- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treeimpute", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"treeimpute {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        if config_required:
            sp.add_argument("config", help="JSON config file")
        else:
            sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default ${THREADS_ENV} or 1)")

    e = sub.add_parser("estimate", help="estimate the mean of y with one or more methods")
    common(e)
    e.add_argument("--data")
    e.add_argument("--schema")
    e.add_argument("--y")
    e.add_argument("--method", help=f"comma-separated, from {','.join(m.lower() for m in METHODS)}")
    e.add_argument("--out")
    e.add_argument("--seed", type=int)
    e.add_argument("--save-model", action="store_true", help="write fitted trees/forests as JSON")
    e.set_defaults(func=cmd_estimate)

    i = sub.add_parser("impute", help="chained-equations imputation of every incomplete column")
    common(i)
    i.add_argument("--data")
    i.add_argument("--schema")
    i.add_argument("--y")
    i.add_argument("--out")
    i.add_argument("--seed", type=int)
    i.add_argument("-m", type=int, help="number of imputations")
    i.add_argument("--iterations", type=int)
    i.set_defaults(func=cmd_impute)

    s = sub.add_parser("simulate", help="run a bias/RMSE simulation experiment")
    common(s, config_required=True)
    s.add_argument("--out")
    s.add_argument("--trials", type=int)
    s.add_argument("--plot-data", action=argparse.BooleanOptionalAction, default=True,
                   help="also write the aggregated bias/RMSE table")
    s.set_defaults(func=cmd_simulate)

    n = sub.add_parser("inspect", help="render a saved tree or forest")
    n.add_argument("model")
    n.add_argument("--tree", type=int, default=0, help="forest member to render")
    n.set_defaults(func=cmd_inspect)

    y = sub.add_parser("synth", help="write a synthetic survey CSV and its schema")
    common(y)
    y.add_argument("path")
    y.add_argument("--n", type=int)
    y.add_argument("--seed", type=int)
    y.add_argument("--y-independent", action="store_true")
    y.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"treeimpute {args.command}: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError, ValueError) as exc:
        print(f"treeimpute {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
