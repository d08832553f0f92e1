"""Command-line entry point: ``stratquery {simulate,query,evaluate,report}``.

Each subcommand reads one YAML run file (``--config``); ``--seed``, ``--out``
and ``--parallelism`` override the file. Every numeric output is a function
of the config and the master seed only.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .acquisition import empirical_af
from .evaluation import evaluate_ipw, ipw_lift, ratio_summary
from .hyperfit import FitConfig
from .ingest import CSVSchema, IngestError, collapse_features, ingest_csv, read_column
from .oracle import PrivacyConfig, open_session
from .regions import Bounds
from .simulation import (
    ALL_METHODS,
    DESK_METHODS,
    SCHEMA_VERSION,
    MethodDefaults,
    ResultsTable,
    build_grid,
    desk_grid,
    dominance_matrix,
    full_grid,
    run_grid,
    summarize,
)
from .strategies import AffineMap, MarginalCountModel, StrategicRunConfig, TargetingPolicy, bins_for_budget, run_strategic, run_uniform

logger = logging.getLogger("stratquery")

QUERY_SCHEMA = "stratquery-query/1"
EVAL_SCHEMA = "stratquery-evaluation/1"
SUMMARY_SCHEMA = "stratquery-summary/1"
DOMINANCE_SCHEMA = "stratquery-dominance/1"
SUMMARY_PARAMS = ("amplitude", "lengthscale", "query_budget", "noise_scale")
MODES = ("simulate", "query", "evaluate", "report")


class ConfigError(ValueError):
    pass


# -- config -----------------------------------------------------------------------


def load_config(path) -> dict:
    """Parse a YAML run file; a missing or non-mapping file is a :class:`ConfigError`."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    with open(p, encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    mode = cfg.get("mode")
    if mode is not None and mode not in MODES:
        raise ConfigError(f"{p}: unknown mode {mode!r}")
    # relative dataset/result paths resolve against the config's directory
    cfg["_base"] = str(p.parent.resolve())
    return cfg


def _resolve(cfg: dict, path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(cfg.get("_base", ".")) / p


def _block(cfg: dict, name: str) -> dict:
    block = cfg.get(name) or {}
    if not isinstance(block, dict):
        raise ConfigError(f"'{name}' block must be a mapping")
    return block


def _check_keys(block: dict, allowed, name: str) -> None:
    unknown = set(block) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")


def simulation_settings(cfg: dict, full: bool = False):
    """Experiment settings described by the ``simulate`` block."""
    block = _block(cfg, "simulate")
    _check_keys(
        block,
        ("grid", "repeats", "methods", "amplitudes", "lengthscales", "budgets", "noise_scales",
         "population_size", "resolution", "treat_prob", "cost", "min_count", "method_defaults"),
        "simulate",
    )
    grid = "full" if full else block.get("grid", "desk")
    try:
        defaults = MethodDefaults(**(block.get("method_defaults") or {}))
    except TypeError as exc:
        raise ConfigError(f"method_defaults: {exc}") from None
    kw = {"defaults": defaults}
    for key in ("population_size", "resolution", "treat_prob", "cost", "min_count"):
        if key in block:
            kw[key] = block[key]
    if grid == "desk":
        return desk_grid(block.get("repeats", 30), block.get("methods", DESK_METHODS), **kw)
    if grid == "full":
        return full_grid(block.get("repeats", 100), block.get("methods", ALL_METHODS), **kw)
    if grid == "custom":
        try:
            axes = [block[k] for k in ("amplitudes", "lengthscales", "budgets", "noise_scales")]
        except KeyError as exc:
            raise ConfigError(f"custom grid needs {exc.args[0]!r}") from None
        return build_grid(*axes, repeats=block.get("repeats", 30), methods=tuple(block.get("methods", DESK_METHODS)), **kw)
    raise ConfigError(f"unknown grid {grid!r}")


# -- table output -----------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else repr(float(v))
    return v


def table_text(schema: str, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def write_table(path, schema: str, header, rows) -> None:
    Path(path).write_text(table_text(schema, header, rows), encoding="utf-8")


def read_table(path) -> tuple[str, list[dict]]:
    """Rows of a table written by :func:`write_table`; returns ``(schema, rows)``."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# schema:"):
        raise ValueError(f"{path}: missing schema line")
    schema = lines[0].split(":", 1)[1].strip()
    return schema, list(csv.DictReader(lines[1:]))


def write_simulation_tables(results: ResultsTable, out: Path) -> None:
    mat, methods = dominance_matrix(results)
    write_table(out / "dominance.csv", DOMINANCE_SCHEMA, ["focal", *methods], [[m, *row] for m, row in zip(methods, mat.tolist())])
    for param in SUMMARY_PARAMS:
        rows = summarize(results, param)
        write_table(
            out / f"summary_{param}.csv", SUMMARY_SCHEMA, ["method", param, "mean", "ci_low", "ci_high", "n"],
            [[r["method"], r[param], r["mean"], r["ci_low"], r["ci_high"], r["n"]] for r in rows],
        )


# -- simulate -----------------------------------------------------------------------


def cmd_simulate(cfg: dict, seed: int, out: Path, parallelism: int = 1, full_grid: bool = False) -> int:
    settings = simulation_settings(cfg, full_grid)
    out.mkdir(parents=True, exist_ok=True)
    results = ResultsTable()
    path = out / "results.csv"
    for sid, setting in enumerate(settings):
        part = run_grid([setting], seed, parallelism, setting_ids=[sid])
        results.rows.extend(part.rows)
        # rewritten after each setting so a crash keeps finished settings
        results.write(path)
        logger.info("setting %d/%d done", sid + 1, len(settings))
    write_simulation_tables(results, out)
    failed = sum(1 for r in results if r["error"])
    if failed:
        logger.warning("%d runs failed; see the error column", failed)
    return 0


# -- query --------------------------------------------------------------------------

QUERY_KEYS = (
    "dataset", "schema", "effect_column", "collapse", "train_size", "eval_size", "repeats",
    "budgets", "noise_scales", "settings", "min_count", "cost", "methods", "resolution",
)


def _query_options(cfg: dict) -> dict:
    block = _block(cfg, "query")
    _check_keys(block, QUERY_KEYS, "query")
    if "dataset" not in block:
        raise ConfigError("query block needs 'dataset'")
    path = _resolve(cfg, block["dataset"])
    if not path.is_file():
        raise ConfigError(f"dataset not found: {path}")
    sch = dict(block.get("schema") or {})
    if "features" not in sch:
        raise ConfigError("query schema needs 'features'")
    sch.setdefault("propensity", 0.85)
    try:
        schema = CSVSchema(**sch)
    except TypeError as exc:
        raise ConfigError(f"schema: {exc}") from None
    if "settings" in block:
        combos = [(int(q), float(s)) for q, s in block["settings"]]
    else:
        combos = [(int(q), float(s)) for q in block.get("budgets", [27, 64]) for s in block.get("noise_scales", [0.01, 0.1])]
    methods = tuple(block.get("methods", ("uniform", "strategic")))
    if not methods or set(methods) - {"uniform", "strategic"}:
        raise ConfigError("query methods must be a non-empty subset of {uniform, strategic}")
    opts = {
        "path": path,
        "schema": schema,
        "effect_column": block.get("effect_column"),
        "collapse": block.get("collapse"),
        "train_size": int(block.get("train_size", 50_000)),
        "eval_size": int(block.get("eval_size", 50_000)),
        "repeats": int(block.get("repeats", 20)),
        "combos": combos,
        "min_count": int(block.get("min_count", 20)),
        "cost": float(block.get("cost", 0.01)),
        "methods": methods,
        "resolution": int(block.get("resolution", 10)),
    }
    if min(opts["train_size"], opts["eval_size"], opts["repeats"]) < 1 or not combos:
        raise ConfigError("train_size, eval_size, repeats and settings must be positive / non-empty")
    for q, s in combos:
        PrivacyConfig(q, s, opts["min_count"])  # validates
    return opts


def load_query_data(opts: dict):
    data = ingest_csv(opts["path"], opts["schema"])
    if opts["collapse"]:
        c = opts["collapse"]
        data = collapse_features(data, c.get("keep", ()), bool(c.get("sum_rest", True)))
    effects = read_column(opts["path"], opts["effect_column"]) if opts["effect_column"] else None
    return data, effects


def _tag(method, q, s, rep=None) -> str:
    base = f"{method}_Q{q}_s{s:g}"
    return base if rep is None else f"{base}_r{rep:03d}"


def _query_repeat(args):
    """One bootstrap repeat: every (budget, noise) combination on the same train/eval draw."""
    rep, data, effects, opts, seed = args
    split = np.random.SeedSequence([seed & 0xFFFFFFFF, rep, 0])
    rng = np.random.default_rng(split)
    n = len(data)
    train_idx = rng.integers(0, n, opts["train_size"])
    eval_idx = rng.integers(0, n, opts["eval_size"])
    train, evl = data.subset(train_idx), data.subset(eval_idx)
    X = train.covariates
    bounds = Bounds(X.min(axis=0), X.max(axis=0))
    sd = X.std(axis=0)
    # the GP works in standardized coordinates built from disclosed marginal moments
    mmap = AffineMap(tuple(X.mean(axis=0)), tuple(np.where(sd > 0, sd, 1.0)))
    # disclosed percentiles and row count let the client skip regions that would be suppressed
    counts = MarginalCountModel.from_data(X)
    cost = opts["cost"]
    out = []
    for ci, (q, s) in enumerate(opts["combos"]):
        u_seed, s_seed, c_seed = np.random.SeedSequence([seed & 0xFFFFFFFF, rep, 1 + ci]).spawn(3)
        policies = {}
        matched = q
        if "uniform" in opts["methods"]:
            session = open_session(train, PrivacyConfig(q, s, opts["min_count"], seed=u_seed))
            policy, records = run_uniform(session, bounds, bins_for_budget(q, bounds.ndim), cost)
            matched = sum(not r.suppressed for r in records)
            policies["uniform"] = (policy, records)
        if "strategic" in opts["methods"]:
            if matched > 0:
                session = open_session(train, PrivacyConfig(matched, s, opts["min_count"], seed=s_seed))
                run_cfg = StrategicRunConfig(
                    af=empirical_af(),
                    fit=FitConfig(activation_step=10, initial_noise_sd=s + 0.01),
                    cost=cost,
                    resolution=opts["resolution"],
                    model_map=mmap,
                    count_model=counts,
                    count_scaled_noise=True,
                )
                policy, records, _ = run_strategic(session, bounds, run_cfg, np.random.default_rng(c_seed))
            else:
                policy, records = TargetingPolicy.constant(bounds, False), []
            policies["strategic"] = (policy, records)
        entries = {}
        for method, (policy, records) in policies.items():
            acts = policy.assign(evl.covariates, clip=True)
            entries[method] = (acts, policy, records)
        if effects is not None:
            entries["oracle"] = (effects[eval_idx] > cost, None, [])
        for method, (acts, policy, records) in entries.items():
            report = evaluate_ipw(acts, evl, cost)
            lift, lift_se = ipw_lift(acts, evl, cost)
            out.append({
                "repeat": rep, "combo": ci, "method": method, "query_budget": q, "noise_scale": s,
                "queries": len(records), "suppressed": sum(r.suppressed for r in records),
                "treated_share": float(acts.mean()), "lift": lift, "lift_se": lift_se,
                "report": report.to_dict(), "policy": None if policy is None else policy.to_dict(),
                "audit": [r.to_dict() for r in records],
            })
    return out


def run_query(opts: dict, data, effects, seed: int, parallelism: int = 1) -> list[dict]:
    tasks = [(rep, data, effects, opts, seed) for rep in range(opts["repeats"])]
    if parallelism > 1:
        with ProcessPoolExecutor(parallelism) as ex:
            chunks = list(ex.map(_query_repeat, tasks))
    else:
        chunks = [_query_repeat(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def summarize_query(rows: list[dict], opts: dict) -> list[dict]:
    """Per (method, budget, noise): mean IPW lift over treat-all and its spread over repeats.

    ``bootstrap_se`` is the standard deviation of per-repeat lifts (the
    bootstrap SE of one estimate); ``lift_se`` is the SE of their mean.
    """
    summary = []
    methods = list(dict.fromkeys(r["method"] for r in rows))
    for ci, (q, s) in enumerate(opts["combos"]):
        sel = {m: sorted((r for r in rows if r["combo"] == ci and r["method"] == m), key=lambda r: r["repeat"]) for m in methods}
        ref = np.array([r["lift"] for r in sel.get("oracle", [])])
        for m in methods:
            lifts = np.array([r["lift"] for r in sel[m]])
            row = {
                "method": m, "query_budget": q, "noise_scale": s, "repeats": lifts.size,
                "mean_lift": float(lifts.mean()),
                "bootstrap_se": float(lifts.std(ddof=1)) if lifts.size > 1 else float("nan"),
                "lift_se": float(lifts.std(ddof=1) / math.sqrt(lifts.size)) if lifts.size > 1 else float("nan"),
                "mean_ipw_se": float(np.mean([r["lift_se"] for r in sel[m]])),
                "mean_queries": float(np.mean([r["queries"] for r in sel[m]])),
                "ratio_mean": float("nan"), "ratio_ci_low": float("nan"), "ratio_ci_high": float("nan"),
            }
            if ref.size == lifts.size and ref.size and np.all(ref != 0):
                rs = ratio_summary(lifts, ref)
                row.update(ratio_mean=rs["mean"], ratio_ci_low=rs["ci_low"], ratio_ci_high=rs["ci_high"])
            summary.append(row)
    return summary


QUERY_COLUMNS = (
    "method", "query_budget", "noise_scale", "repeats", "mean_lift", "bootstrap_se", "lift_se", "mean_ipw_se",
    "mean_queries", "ratio_mean", "ratio_ci_low", "ratio_ci_high",
)


def cmd_query(cfg: dict, seed: int, out: Path, parallelism: int = 1) -> int:
    opts = _query_options(cfg)
    data, effects = load_query_data(opts)
    logger.info("query mode on %d rows, %d covariates", len(data), data.ndim)
    rows = run_query(opts, data, effects, seed, parallelism)
    for sub in ("policies", "audit", "reports"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for r in rows:
        tag = _tag(r["method"], r["query_budget"], r["noise_scale"], r["repeat"])
        if r["policy"] is not None:
            (out / "policies" / f"{tag}.json").write_text(json.dumps(r["policy"], sort_keys=True), encoding="utf-8")
            with open(out / "audit" / f"{tag}.jsonl", "w", encoding="utf-8") as fh:
                for rec in r["audit"]:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
    summary = summarize_query(rows, opts)
    for srow in summary:
        m, q, s = srow["method"], srow["query_budget"], srow["noise_scale"]
        per = [
            {k: r[k] for k in ("repeat", "queries", "suppressed", "treated_share", "lift", "lift_se")} | r["report"]
            for r in rows if r["method"] == m and r["query_budget"] == q and r["noise_scale"] == s
        ]
        doc = {"schema": QUERY_SCHEMA, "summary": srow, "repeats": sorted(per, key=lambda d: d["repeat"])}
        (out / "reports" / f"{_tag(m, q, s)}.json").write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")
    write_table(out / "query_summary.csv", QUERY_SCHEMA, QUERY_COLUMNS, [[r[c] for c in QUERY_COLUMNS] for r in summary])
    return 0


# -- evaluate -----------------------------------------------------------------------


def cmd_evaluate(cfg: dict, seed: int, out: Path) -> int:
    """IPW value and lift of saved policies on a dataset."""
    block = _block(cfg, "evaluate")
    _check_keys(block, ("dataset", "schema", "collapse", "policies", "cost", "paper_literal_ipw"), "evaluate")
    opts = _query_options({"query": {k: block[k] for k in ("dataset", "schema", "collapse") if k in block}, "_base": cfg.get("_base", ".")})
    policies = [_resolve(cfg, p) for p in block.get("policies", ())]
    if not policies:
        raise ConfigError("evaluate block needs at least one policy path")
    missing = [str(p) for p in policies if not p.is_file()]
    if missing:
        raise ConfigError(f"policy files not found: {missing}")
    data, _ = load_query_data(opts)
    cost = float(block.get("cost", 0.01))
    literal = bool(block.get("paper_literal_ipw", False))
    rows = []
    for p in policies:
        acts = TargetingPolicy.load(p).assign(data.covariates, clip=True)
        rep = evaluate_ipw(acts, data, cost, literal)
        lift, se = ipw_lift(acts, data, cost, literal)
        rows.append([p.name, rep.policy_value, rep.standard_error, rep.treat_all_value, rep.control_all_value, lift, se])
    out.mkdir(parents=True, exist_ok=True)
    write_table(
        out / "evaluation.csv", EVAL_SCHEMA,
        ["policy", "value", "value_se", "treat_all", "control_all", "lift_vs_treat_all", "lift_se"], rows,
    )
    return 0


# -- report -------------------------------------------------------------------------


def _svg(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed salt keeps SVG element ids stable between runs
    plt.rcParams["svg.hashsalt"] = "stratquery"
    return plt


def _report_simulation(results: ResultsTable, out: Path) -> list[Path]:
    plt = _plt()
    written = []
    methods = results.methods()
    rows = []
    for m in methods:
        val = results.column("value", method=m)
        frac = results.column("fraction", method=m)
        frac = frac[np.isfinite(frac)]
        half = 1.96 * frac.std(ddof=1) / math.sqrt(frac.size) if frac.size > 1 else float("nan")
        rows.append([m, int(val.size), float(np.nanmean(val)), float(frac.mean()) if frac.size else float("nan"), half])
    write_table(out / "method_summary.csv", SUMMARY_SCHEMA, ["method", "runs", "mean_value", "mean_fraction", "ci_halfwidth"], rows)
    written.append(out / "method_summary.csv")
    write_simulation_tables(results, out)
    written += [out / "dominance.csv"] + [out / f"summary_{p}.csv" for p in SUMMARY_PARAMS]

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(range(len(rows)), [r[3] for r in rows], yerr=[r[4] for r in rows], color="0.6")
    ax.set_xticks(range(len(rows)), [r[0] for r in rows], rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("fraction of oracle")
    fig.tight_layout()
    _svg(fig, out / "fraction_by_method.svg")
    plt.close(fig)
    written.append(out / "fraction_by_method.svg")

    for param in SUMMARY_PARAMS:
        summ = summarize(results, param)
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for m in methods:
            pts = [r for r in summ if r["method"] == m]
            ax.errorbar([r[param] for r in pts], [r["mean"] for r in pts],
                        yerr=[r["mean"] - r["ci_low"] for r in pts], marker="o", capsize=2, label=m)
        ax.set_xlabel(param)
        ax.set_ylabel("fraction of oracle")
        ax.legend(fontsize=6)
        fig.tight_layout()
        _svg(fig, out / f"fraction_by_{param}.svg")
        plt.close(fig)
        written.append(out / f"fraction_by_{param}.svg")

    mat, names = dominance_matrix(results)
    fig, ax = plt.subplots(figsize=(1 + 0.6 * len(names), 1 + 0.5 * len(names)))
    ax.imshow(mat, cmap="Greys", vmin=0, vmax=max(1, mat.max()) * 1.5)
    for (i, j), v in np.ndenumerate(mat):
        ax.text(j, i, str(v), ha="center", va="center", fontsize=8)
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(names)), names, fontsize=7)
    ax.set_xlabel("competitor")
    ax.set_ylabel("focal")
    fig.tight_layout()
    _svg(fig, out / "dominance.svg")
    plt.close(fig)
    written.append(out / "dominance.svg")
    return written


def _report_query(rows: list[dict], baselines: dict, out: Path) -> list[Path]:
    plt = _plt()
    table = [dict(r) for r in rows]
    for name, value in sorted(baselines.items()):
        table.append({c: "" for c in QUERY_COLUMNS} | {"method": name, "mean_lift": float(value)})
    header = [*QUERY_COLUMNS, *(f"ratio_to_{b}" for b in sorted(baselines))]
    body = []
    for r in table:
        lift = float(r["mean_lift"]) if r["mean_lift"] != "" else float("nan")
        body.append([r[c] for c in QUERY_COLUMNS] + [lift / float(baselines[b]) for b in sorted(baselines)])
    write_table(out / "query_report.csv", QUERY_SCHEMA, header, body)

    labels = [f"{r['method']}\nQ{r['query_budget']} s{r['noise_scale']}" for r in rows]
    lifts = [float(r["mean_lift"]) for r in rows]
    errs = [float(r["lift_se"]) * 1.96 if r["lift_se"] not in ("", None) else 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(max(5, 0.7 * len(rows)), 3.5))
    ax.bar(range(len(rows)), lifts, yerr=errs, color="0.6")
    for b in sorted(baselines):
        ax.axhline(float(baselines[b]), ls="--", color="k", lw=0.8)
    ax.set_xticks(range(len(rows)), labels, fontsize=6)
    ax.set_ylabel("IPW lift over treat-all")
    fig.tight_layout()
    _svg(fig, out / "query_lift.svg")
    plt.close(fig)
    return [out / "query_report.csv", out / "query_lift.svg"]


def cmd_report(paths, out: Path, baselines=None) -> int:
    """Aggregate tables and SVG charts from simulation results and/or query summaries."""
    if not paths:
        raise ConfigError("report needs at least one results file")
    sim_rows, query_rows = [], []
    for p in map(Path, paths):
        if not p.is_file():
            raise ConfigError(f"results file not found: {p}")
        try:
            schema, _ = read_table(p)
            if schema == SCHEMA_VERSION:
                sim_rows.extend(ResultsTable.read(p).rows)
            elif schema == QUERY_SCHEMA:
                query_rows.extend(read_table(p)[1])
            else:
                raise ValueError(f"unsupported schema {schema!r}")
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{p}: malformed results ({exc})") from None
    if not sim_rows and not query_rows:
        raise ConfigError("results set is empty; nothing written")
    out.mkdir(parents=True, exist_ok=True)
    if sim_rows:
        _report_simulation(ResultsTable(sim_rows), out)
    if query_rows:
        _report_query(query_rows, dict(baselines or {}), out)
    return 0


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratquery", description="Targeting policies from private aggregate queries.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in MODES:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="YAML run file")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out", type=Path, help="output directory (overrides the config)")
        sp.add_argument("--parallelism", type=int, help="worker processes")
        if name == "simulate":
            sp.add_argument("--full-grid", action="store_true", help="run the full 144-setting factorial")
        if name == "report":
            sp.add_argument("results", nargs="*", type=Path, help="results or query-summary tables")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        mode = cfg.get("mode")
        if mode is not None and mode != args.command:
            raise ConfigError(f"config is for mode {mode!r}, not {args.command!r}")
        seed = int(args.seed if args.seed is not None else cfg.get("seed", 0))
        out = args.out or (_resolve(cfg, cfg["out"]) if "out" in cfg else Path("out"))
        par = int(args.parallelism or cfg.get("parallelism", 1))
        if par < 1:
            raise ConfigError("parallelism must be >= 1")
        if args.command == "simulate":
            return cmd_simulate(cfg, seed, out, par, args.full_grid)
        if args.command == "query":
            return cmd_query(cfg, seed, out, par)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, seed, out)
        block = _block(cfg, "report")
        paths = list(args.results) + [_resolve(cfg, p) for p in block.get("results", ())]
        return cmd_report(paths, out, block.get("baselines"))
    except (ConfigError, IngestError, ValueError) as exc:
        print(f"stratquery {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
