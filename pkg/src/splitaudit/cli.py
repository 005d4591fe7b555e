"""Command-line front end.

``check``     test whether the groups of a CSV share one distribution
``simulate``  Monte-Carlo power studies on synthetic scenarios
``gen``       write a synthetic scenario as CSV

Exit codes: 0 no imbalance detected, 1 imbalance detected (``check`` only),
2 usage or data error. Any flag can also be given in a ``--config`` file
of ``key = value`` lines (keys are flag names without dashes); flags on the
command line win. At ``--alpha 0.05`` the permutation procedures need
``--b 19`` or more before they can reject anything.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .dataset import DataError, load_csv
from .disco import disco_test
from .multiplicity import baseline_marginal_test
from .propensity import propensity_test
from .randchi import RandChiConfig, combination_counts, randomized_chi_square_test
from .simgen import (METHODS, REALWORLD_COLUMNS, ScenarioSpec, dimension_sweep, generate,
                     power_study)

SCHEMA_VERSION = 1
CHECK_METHODS = ("baseline", "disco", "propensity", "randchi")
PAPER_METHODS = ("disco", "propensity", "randchi")


class UsageError(Exception):
    pass


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def _train_frac(s):
    if s.lower() in ("none", "in-sample"):
        return None
    return float(s)


def _range(s):
    """``a..b`` or ``a..b:step`` -> list of ints."""
    try:
        body, _, step = s.partition(":")
        lo, hi = body.split("..")
        return list(range(int(lo), int(hi) + 1, int(step or 1)))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b[:step], got {s!r}") from None


def _method_list(s, allowed, all_means):
    if s == "all":
        return list(all_means)
    out = [m.strip() for m in s.split(",") if m.strip()]
    bad = [m for m in out if m not in allowed]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"unknown method(s) {bad or s!r}; choose from {allowed}")
    return out


def _common(p):
    p.add_argument("--config", help="key = value file with defaults for any flag")
    p.add_argument("--alpha", type=float, default=0.05, help="test level")
    p.add_argument("--b", type=int, default=200, help="permutation replicates")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="parallel workers; never changes results")
    p.add_argument("--disco-alpha", type=float, default=1.0, help="distance index in (0, 2]")
    p.add_argument("--disco-encoding", choices=("onehot", "codes"), default="onehot")
    p.add_argument("--train-frac", type=_train_frac, default=0.8,
                   help="propensity training share c, or 'none' to fit and score all rows")
    p.add_argument("--l2", type=float, default=1e-4, help="propensity ridge penalty")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--randchi-c", type=int, default=None, help="columns per draw")
    p.add_argument("--randchi-d", type=int, default=10, help="number of draws")
    p.add_argument("--randchi-up-to", action="store_true",
                   help="treat --randchi-c as a maximum: each draw takes 1..C columns")
    p.add_argument("--adjust", choices=("none", "holm", "by", "minp"), default="minp",
                   help="multiplicity control for baseline and randchi")
    p.add_argument("--q", type=float, default=0.05, help="BY false discovery level")


def build_parser():
    parser = argparse.ArgumentParser(prog="splitaudit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="test the groups of a CSV for equal distributions")
    c.add_argument("--input", required=True)
    c.add_argument("--group-col", default="0", help="group column name or 0-based index")
    c.add_argument("--no-header", action="store_true")
    c.add_argument("--methods", default="all",
                   type=lambda s: _method_list(s, CHECK_METHODS, CHECK_METHODS))
    c.add_argument("--report", help="write the JSON report here")
    c.add_argument("--format", choices=("json", "text"), default="text")
    c.add_argument("--timings", action="store_true", help="add wall-time fields to the report")
    c.add_argument("--top-combinations", type=int, default=15)
    _common(c)

    s = sub.add_parser("simulate", help="Monte-Carlo power study")
    _scenario_flags(s)
    s.add_argument("--reps", type=int, default=100)
    s.add_argument("--methods", default="all",
                   type=lambda v: _method_list(v, CHECK_METHODS, PAPER_METHODS))
    s.add_argument("--sweep-hetero", type=_range, help="heterogeneous column counts, a..b")
    s.add_argument("--sweep-dim", type=_range, help="dimensions, a..b[:step] (combined scenario)")
    s.add_argument("--compare", choices=("holm",), help="add paired Holm rows")
    s.add_argument("--out", help="power CSV path (default stdout)")
    s.add_argument("--flags-out", help="randchi column flag-count CSV path")
    _common(s)

    g = sub.add_parser("gen", help="write a synthetic dataset as CSV")
    _scenario_flags(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="CSV path (default stdout)")
    g.add_argument("--config")
    return parser


def _scenario_flags(p):
    p.add_argument("--scenario", choices=("marginal", "interaction", "combined", "realworld"),
                   default="marginal")
    p.add_argument("--signal", choices=("weak", "medium", "strong"), default="strong")
    p.add_argument("--n-hetero", type=int, default=None,
                   help="heterogeneous columns (default: all)")
    p.add_argument("--rows", type=int, default=None, help="rows per group (100; realworld 800)")
    p.add_argument("--cols", type=int, default=10)
    p.add_argument("--groups", type=int, default=4)


def read_config(path):
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}: expected key = value, got {line!r}")
        out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        conf = read_config(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = set(conf) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        flags = {k: v for k, v in conf.items()}
        for a in subparser._actions:
            if a.dest in flags and a.nargs == 0:
                flags[a.dest] = flags[a.dest].lower() in ("1", "true", "yes", "on")
        subparser.set_defaults(**flags)
        args = parser.parse_args(argv)
    return args


# ------------------------------------------------------------------ check

def _fingerprint(path, g):
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return {"sha256": digest, "rows": g.n_total, "cols": g.n_cols, "groups": g.k,
            "group_names": list(g.group_names), "group_sizes": list(g.sizes)}


def _run_check_method(name, g, args):
    if name == "baseline":
        res = baseline_marginal_test(g, args.adjust, args.alpha, args.b, args.seed, q=args.q)
        return {
            "config": {"adjust": args.adjust, "b": args.b if args.adjust == "minp" else 0},
            "p_values": dict(zip(g.col_names, res.original)),
            "threshold": res.threshold,
            "rejected_columns": [g.col_names[i] for i in res.rejections],
            "reject": res.reject,
            "warnings": res.warnings,
        }, None
    if name == "disco":
        res = disco_test(g, args.disco_alpha, args.b, args.alpha, args.seed, args.disco_encoding)
        return {
            "config": {"index_alpha": args.disco_alpha, "encoding": args.disco_encoding, "b": args.b},
            "statistic": res.statistic,
            "p_value": res.p_value,
            "reject": res.reject,
            "warnings": res.warnings,
        }, None
    if name == "propensity":
        res = propensity_test(g, args.train_frac, args.l2, args.b, args.alpha, args.seed,
                              args.max_iter, threads=args.threads)
        return {
            "config": {"train_frac": args.train_frac, "l2_lambda": args.l2, "b": args.b,
                       "max_iter": args.max_iter},
            "p_value": float(res.original[0]),
            "threshold": res.threshold,
            "reject": res.reject,
            "warnings": res.warnings,
        }, None
    cfg = RandChiConfig(args.randchi_c, args.randchi_d, args.b, args.alpha, args.seed,
                        adjust=args.adjust, variable_size=args.randchi_up_to)
    out = randomized_chi_square_test(g, cfg)
    names = g.col_names
    draws = [{"columns": [names[j] for j in cols], "p_value": p, "statistic": s, "dof": int(d),
              "n_combinations": l, "rejected": i in out.rejected_draws}
             for i, (cols, p, s, d, l) in enumerate(zip(out.draw_columns, out.draw_pvalues,
                                                        out.draw_statistics, out.draw_dofs,
                                                        out.draw_n_combinations))]
    block = {
        "config": {"cols_per_draw": out.cols_per_draw, "n_draws": cfg.n_draws, "b": args.b,
                   "adjust": args.adjust, "variable_size": cfg.variable_size},
        "threshold": out.threshold,
        "draws": draws,
        "column_flag_counts": dict(zip(names, out.column_flag_counts)),
        "reject": out.overall_reject,
        "warnings": out.warnings,
    }
    worst = int(np.argmin(out.draw_pvalues))
    detail = {"draw": worst, "columns": [names[j] for j in out.draw_columns[worst]],
              "group_names": list(g.group_names),
              "combinations": combination_counts(g, out.draw_columns[worst], args.top_combinations)}
    if g.token_maps is not None:
        cols = out.draw_columns[worst]
        for row in detail["combinations"]:
            row["tokens"] = [g.token_maps[j][c] for j, c in zip(cols, row["combination"])]
    block["most_imbalanced_draw"] = detail
    return block, out


def cmd_check(args, stdout):
    g = load_csv(args.input, args.group_col, header=not args.no_header)
    report = {
        "schema_version": SCHEMA_VERSION,
        "input": _fingerprint(args.input, g),
        "seed": args.seed,
        "level_alpha": args.alpha,
        "methods": {},
    }
    for name in args.methods:
        t0 = time.perf_counter()
        block, _ = _run_check_method(name, g, args)
        block["decision"] = "reject" if block["reject"] else "no_reject"
        if args.timings:
            block["wall_time_s"] = time.perf_counter() - t0
        report["methods"][name] = block
    rejected = any(b["reject"] for b in report["methods"].values())
    report["decision"] = "reject" if rejected else "no_reject"
    if g.token_maps is not None:
        report["token_maps"] = dict(zip(g.col_names, [list(m) for m in g.token_maps]))
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    if args.format == "json":
        stdout.write(text)
    else:
        stdout.write(_summary(report))
    return 1 if rejected else 0


def _summary(report):
    inp = report["input"]
    lines = [f"{inp['rows']} rows, {inp['cols']} columns, groups "
             + ", ".join(f"{n}={s}" for n, s in zip(inp["group_names"], inp["group_sizes"]))]
    for name, b in report["methods"].items():
        if "p_value" in b:
            detail = f"p={b['p_value']:.4g}"
        elif name == "baseline":
            detail = f"min p={min(b['p_values'].values()):.4g}"
        else:
            detail = f"min draw p={min(d['p_value'] for d in b['draws']):.4g}"
        lines.append(f"{name:<11} {b['decision']:<10} {detail}")
        if name == "randchi" and b["reject"]:
            flagged = sorted(b["column_flag_counts"].items(), key=lambda kv: -kv[1])
            lines.append("  flagged: " + ", ".join(f"{k}={v}" for k, v in flagged if v))
        for w in b["warnings"]:
            lines.append(f"  warning {w['code']}: {w['message']}")
    lines.append(f"overall: {report['decision']}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ simulate / gen

def _spec(args, **over):
    rows = args.rows if args.rows is not None else (800 if args.scenario == "realworld" else 100)
    n_het = args.n_hetero if args.n_hetero is not None else args.cols
    spec = ScenarioSpec(args.scenario, args.signal, n_het, rows, args.cols, args.groups,
                        getattr(args, "seed", 0))
    return replace(spec, **over).validate()


def _method_opts(args):
    return {"b": args.b, "level_alpha": args.alpha, "index_alpha": args.disco_alpha,
            "encoding": args.disco_encoding, "train_frac": args.train_frac,
            "l2_lambda": args.l2, "max_iter": args.max_iter, "cols_per_draw": args.randchi_c,
            "n_draws": args.randchi_d, "adjust": args.adjust, "variable_size": args.randchi_up_to}


def cmd_simulate(args, stdout):
    methods = list(args.methods)
    if args.compare == "holm":
        for m in ("baseline", "randchi"):
            if m in methods:
                methods.append(f"{m}_holm")
    opts = _method_opts(args)
    if args.sweep_dim:
        ests = dimension_sweep(methods, args.sweep_dim, args.signal, args.reps, args.seed,
                               args.rows or 100, args.threads, **opts)
    else:
        specs = [_spec(args)]
        if args.sweep_hetero:
            specs = [_spec(args, n_hetero_cols=h) for h in args.sweep_hetero]
        ests = [power_study(m, s, args.reps, args.seed, args.threads, **opts)
                for s in specs for m in methods]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "scenario", "signal", "n_hetero", "m", "reps", "power", "se"])
    for e in ests:
        c = e.config
        real = c["scenario"] == "realworld"
        w.writerow([e.method, c["scenario"], "" if real else c["signal"],
                    "" if real else c["n_hetero_cols"], 8 if real else c["n_cols"],
                    e.reps, f"{e.power:.6f}", f"{e.se:.6f}"])
    _emit(buf.getvalue(), args.out, stdout)
    if args.flags_out:
        fbuf = io.StringIO()
        fw = csv.writer(fbuf, lineterminator="\n")
        fw.writerow(["method", "n_hetero", "column", "times_rejected"])
        for e in ests:
            if e.flag_counts is None:
                continue
            real = e.config["scenario"] == "realworld"
            names = REALWORLD_COLUMNS if real else [f"col{j}" for j in range(len(e.flag_counts))]
            for name, cnt in zip(names, e.flag_counts):
                fw.writerow([e.method, "" if real else e.config["n_hetero_cols"], name, cnt])
        Path(args.flags_out).write_text(fbuf.getvalue(), encoding="utf-8")
    return 0


def write_sample_csv(g, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["group"] + list(g.col_names))
    for name, t in zip(g.group_names, g.groups):
        for row in t.cells.tolist():
            w.writerow([name] + row)


def cmd_gen(args, stdout):
    g = generate(_spec(args))
    buf = io.StringIO()
    write_sample_csv(g, buf)
    _emit(buf.getvalue(), args.out, stdout)
    return 0


def _emit(text, path, stdout):
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        stdout.write(text)


COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "gen": cmd_gen}


def main(argv=None, stdout=None):
    stdout = stdout or sys.stdout
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args, stdout)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else 2
    except (UsageError, DataError, ValueError, OSError) as exc:
        print(f"splitaudit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
