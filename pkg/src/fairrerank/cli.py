"""Command-line interface: one subcommand per pipeline stage plus the
config-driven runner.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3
internal error. Every subcommand accepts --json for a machine-readable
summary and --help/--version. All randomness flows through explicit
--seed flags. FAIRRERANK_OUT_DIR provides a default output location
when --out is omitted.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__, baserank, dataio, experiment, metrics, rerank, segmentation
from .errors import FairRerankError

ENV_OUT = "FAIRRERANK_OUT_DIR"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

_DELIMITERS = {"tab": "\t", "comma": ",", "space": " ", "semicolon": ";"}


class UsageError(Exception):
    """Flag-level problem detected after parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(parser: _Parser):
    parser.add_argument("--json", action="store_true", help="emit a JSON summary on stdout")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")


def _resolve_out(value: str | None, default_name: str) -> Path:
    if value:
        return Path(value)
    env = os.environ.get(ENV_OUT)
    if env:
        return Path(env) / default_name
    raise UsageError(f"--out is required (or set {ENV_OUT})")


def _delimiter(token: str) -> str:
    return _DELIMITERS.get(token.lower(), token)


def _emit(args, payload: dict):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        summary = payload.get("summary", {})
        line = " ".join(f"{k}={v}" for k, v in summary.items())
        print(f"{payload['command']}: {line}")
        for label, path in payload.get("artifacts", {}).items():
            print(f"  {label}: {path}")


def build_parser() -> _Parser:
    parser = _Parser(prog="fairrerank", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[], help="load, k-core filter, and split a raw file")
    p.add_argument("--input", required=True, help="raw delimited interaction file")
    p.add_argument("--out", help="output directory for the canonical split")
    p.add_argument("--delimiter", default="tab", help="delimiter or one of tab/comma/space")
    p.add_argument("--user-col", type=int, default=0)
    p.add_argument("--item-col", type=int, default=1)
    p.add_argument("--weight-col", type=int, default=None)
    p.add_argument("--timestamp-col", type=int, default=None)
    p.add_argument("--header", action="store_true", help="skip the first line")
    p.add_argument("--kcore", type=int, default=10)
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--ratios", type=float, nargs=3, default=(0.7, 0.1, 0.2),
                   metavar=("TRAIN", "VAL", "TEST"))
    _add_common(p)

    p = sub.add_parser("segment", help="assign user/item groups from a canonical split")
    p.add_argument("--data", required=True, help="canonical split directory")
    p.add_argument("--out", help="output directory for the labels")
    p.add_argument("--user-method", choices=["activity", "mainstream"], default="activity")
    p.add_argument("--user-fraction", type=float, default=None)
    p.add_argument("--item-fraction", type=float, default=0.2)
    _add_common(p)

    p = sub.add_parser("rank", help="build or import a top-N score matrix")
    p.add_argument("--data", required=True, help="canonical split directory")
    p.add_argument("--out", help="output score-matrix file")
    p.add_argument("--ranker", choices=["mostpop", "random", "itemknn", "import"],
                   default="mostpop")
    p.add_argument("--n", type=int, default=100, help="candidates per user")
    p.add_argument("--neighbors", type=int, default=20, help="itemknn neighborhood size")
    p.add_argument("--seed", type=int, default=0, help="random ranker seed")
    p.add_argument("--scores", help="source file for --ranker import")
    _add_common(p)

    p = sub.add_parser("rerank", help="re-rank candidates into fair top-K lists")
    p.add_argument("--data", required=True, help="canonical split directory")
    p.add_argument("--scores", required=True, help="score-matrix file")
    p.add_argument("--segments", required=True, help="group labels directory")
    p.add_argument("--out", help="output ranked-lists file")
    p.add_argument("--mode", choices=list(rerank.MODES), default="CP")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--solver", choices=list(rerank.SOLVERS), default="greedy")
    _add_common(p)

    p = sub.add_parser("evaluate", help="score ranked lists against the test split")
    p.add_argument("--data", required=True, help="canonical split directory")
    p.add_argument("--lists", required=True, help="ranked-lists file")
    p.add_argument("--segments", required=True, help="group labels directory")
    p.add_argument("--out", help="output report JSON")
    p.add_argument("--k", type=int, default=None, help="evaluation cutoff (default: list size)")
    p.add_argument("--w", type=float, default=0.5, help="producer weight in the combined metric")
    p.add_argument("--reference", help="reference report JSON for the improvement delta")
    _add_common(p)

    p = sub.add_parser("sweep", help="trace metrics along a lambda grid (CP mode)")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--vary", choices=["lambda1", "lambda2"], default="lambda2")
    p.add_argument("--fixed", type=float, default=0.05, help="value of the other lambda")
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    _add_common(p)

    p = sub.add_parser("run", help="run the full experiment grid from a config")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", help="override the config output_dir")
    p.add_argument("--jobs", type=int, default=1, help="parallel cells")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    _add_common(p)

    p = sub.add_parser("stats", help="cross-run statistics from report files")
    p.add_argument("--reports", required=True, help="directory of report JSON files")
    p.add_argument("--out", help="output directory for the statistics table")
    _add_common(p)

    return parser


# --- handlers ----------------------------------------------------------------


def _cmd_prepare(args) -> dict:
    if args.kcore < 1:
        raise UsageError("--kcore must be >= 1")
    out = _resolve_out(args.out, "dataset")
    fmt = dataio.RecordFormat(
        delimiter=_delimiter(args.delimiter),
        user_col=args.user_col,
        item_col=args.item_col,
        weight_col=args.weight_col,
        timestamp_col=args.timestamp_col,
        header=args.header,
    )
    raw = dataio.load_interactions(args.input, fmt)
    filtered = dataio.kcore_filter(raw, args.kcore)
    sd = dataio.split(filtered, tuple(args.ratios), args.seed)
    dataio.save_split(sd, out)
    stats = dataio.dataset_stats(filtered) if filtered.n_interactions else None
    summary = {
        "users": filtered.n_users,
        "items": filtered.n_items,
        "interactions": filtered.n_interactions,
        "train": sd.train.n_interactions,
        "validation": sd.validation.n_interactions,
        "test": sd.test.n_interactions,
    }
    if stats:
        summary["sparsity"] = round(stats.sparsity, 6)
    return {"command": "prepare", "summary": summary, "artifacts": {"dataset": str(out)}}


def _cmd_segment(args) -> dict:
    if args.user_fraction is not None and not 0 < args.user_fraction < 1:
        raise UsageError("--user-fraction must be in (0, 1)")
    if not 0 < args.item_fraction < 1:
        raise UsageError("--item-fraction must be in (0, 1)")
    out = _resolve_out(args.out, "segments")
    sd = dataio.load_split(args.data)
    groups = segmentation.assign_groups(
        sd.train, args.user_method, args.user_fraction, args.item_fraction
    )
    segmentation.save_groups(groups, out)
    summary = {
        "user_method": groups.user_method,
        "advantaged_users": int((~groups.user_protected).sum()),
        "protected_users": int(groups.user_protected.sum()),
        "short_head_items": int(groups.item_short_head.sum()),
        "long_tail_items": int((~groups.item_short_head).sum()),
    }
    return {"command": "segment", "summary": summary, "artifacts": {"segments": str(out)}}


def _cmd_rank(args) -> dict:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if args.ranker == "import" and not args.scores:
        raise UsageError("--ranker import needs --scores")
    out = _resolve_out(args.out, f"{args.ranker}.tsv")
    sd = dataio.load_split(args.data)
    spec = experiment.RankerSpec(
        name=args.ranker, n_candidates=args.n, neighbors=args.neighbors,
        seed=args.seed, path=args.scores,
    )
    sm = experiment.build_ranker(spec, sd.train)
    baserank.export_scores(sm, sd.train, out)
    summary = {
        "ranker": sm.ranker_tag,
        "users": sm.n_users,
        "n_candidates": sm.n_candidates,
        "short_rows": len(sm.short_rows),
    }
    return {"command": "rank", "summary": summary, "artifacts": {"scores": str(out)}}


def _cmd_rerank(args) -> dict:
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    if args.lambda1 < 0 or args.lambda2 < 0:
        raise UsageError("lambda weights must be >= 0")
    out = _resolve_out(args.out, "lists.tsv")
    sd = dataio.load_split(args.data)
    groups = segmentation.load_groups(args.segments)
    sm = baserank.import_scores(args.scores, sd.train)
    gains = rerank.build_gain_tables(sm, groups, args.k)
    cfg = rerank.RerankConfig(
        k=args.k, mode=args.mode, lambda1=args.lambda1, lambda2=args.lambda2,
        solver=args.solver,
    )
    solver = rerank.lp_rerank if args.solver == "lp" else rerank.greedy_rerank
    lists = solver(sm, gains, cfg)
    rerank.save_ranked_lists(lists, sd.train, out)
    summary = {
        "mode": args.mode,
        "k": args.k,
        "objective": round(lists.objective_value, 6),
        "short_rows": len(lists.short_rows),
    }
    if lists.lp_diagnostics:
        summary["fractional_variables"] = lists.lp_diagnostics["fractional_variables"]
    return {"command": "rerank", "summary": summary, "artifacts": {"lists": str(out)}}


def _cmd_evaluate(args) -> dict:
    if args.k is not None and args.k < 1:
        raise UsageError("--k must be >= 1")
    if not 0 <= args.w <= 1:
        raise UsageError("--w must be in [0, 1]")
    out = _resolve_out(args.out, "report.json")
    sd = dataio.load_split(args.data)
    groups = segmentation.load_groups(args.segments)
    lists = rerank.load_ranked_lists(args.lists, sd.train)
    reference = metrics.EvaluationReport.load(args.reference) if args.reference else None
    rep = metrics.evaluate(
        lists, sd.train, sd.test, groups, k=args.k, w=args.w, reference=reference
    )
    rep.save(out)
    summary = {
        "ndcg_all": round(rep.ndcg_all, 6),
        "dcf": round(rep.dcf, 6),
        "dpf": round(rep.dpf, 6),
        "mcpf": round(rep.mcpf, 6),
    }
    if rep.delta_pct is not None:
        summary["delta_pct"] = round(rep.delta_pct, 4)
    return {"command": "evaluate", "summary": summary, "artifacts": {"report": str(out)}}


def _cmd_sweep(args) -> dict:
    cfg = experiment.ExperimentConfig.load(args.config)
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    rows = experiment.sweep_lambdas(cfg, args.vary, args.fixed)
    artifacts = {}
    keys = sorted({(r["dataset"], r["ranker"]) for r in rows})
    for dataset, ranker in keys:
        block = [r for r in rows if r["dataset"] == dataset and r["ranker"] == ranker]
        table = out / "tables" / f"sweep_{args.vary}__{dataset}__{ranker}.tsv"
        experiment.write_table(block, experiment.SWEEP_COLUMNS, table)
        artifacts[f"table:{dataset}/{ranker}"] = str(table)
        if not args.no_figures:
            from . import figures

            fig = out / "figures" / f"sweep_{args.vary}__{dataset}__{ranker}.png"
            figures.render_sweep(block, args.vary, fig)
            artifacts[f"figure:{dataset}/{ranker}"] = str(fig)
    return {
        "command": "sweep",
        "summary": {"rows": len(rows), "vary": args.vary, "fixed": args.fixed},
        "artifacts": artifacts,
    }


def _cmd_run(args) -> dict:
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    cfg = experiment.ExperimentConfig.load(args.config)
    if args.out:
        cfg.output_dir = args.out
    out = experiment.run_experiment(cfg, jobs=args.jobs, figures=not args.no_figures)
    report_count = len(list((out / "reports").glob("*.json"))) if (out / "reports").exists() else 0
    failures = (out / "failures.log").exists()
    summary = {"reports": report_count, "failures": failures}
    return {
        "command": "run",
        "summary": summary,
        "artifacts": {"run_dir": str(out), "summary_table": str(out / "tables" / "summary.tsv")},
    }


def _cmd_stats(args) -> dict:
    out = _resolve_out(args.out, "stats")
    reports_dir = Path(args.reports)
    paths = sorted(reports_dir.glob("*.json"))
    if not paths:
        raise UsageError(f"no report JSON files under {reports_dir}")
    reports = [metrics.EvaluationReport.load(p) for p in paths]
    rows = experiment.cross_stats(reports)
    table = Path(out) / "correlations.tsv"
    experiment.write_table(rows, experiment.STATS_COLUMNS, table)
    return {
        "command": "stats",
        "summary": {"reports": len(reports), "groups": len(rows)},
        "artifacts": {"table": str(table)},
    }


_HANDLERS = {
    "prepare": _cmd_prepare,
    "segment": _cmd_segment,
    "rank": _cmd_rank,
    "rerank": _cmd_rerank,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "run": _cmd_run,
    "stats": _cmd_stats,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        payload = _HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"fairrerank {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FairRerankError as exc:
        print(f"fairrerank {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"fairrerank {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"fairrerank {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    _emit(args, payload)
    return EXIT_OK


def entry():  # console_scripts hook
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
