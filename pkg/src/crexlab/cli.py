"""Command-line entry point.

Exit status is 0 on success, 2 when a config or input document fails
validation, and 1 for any other failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigError, CrexError, DivergenceDetected
from .experiments import (
    DEFAULT_STRATEGIES,
    ablate_selection,
    evaluate_scenario,
    loss_ablation_rows,
    run_sweep,
)
from .reporting import write_csv, write_json, write_manifest
from .selection import SelectionStrategy
from .synthworld import Query, generate, load_scenario, save_scenario
from .trainer import TRACE_FIELDS, compare_losses, train

log = logging.getLogger("crexlab")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message, "argv")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config JSON")
    p.add_argument("--out-dir", type=Path, help="directory for reports (default: config output_dir)")
    p.add_argument("--no-timestamp", action="store_true", help="omit timestamps for reproducible output")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")


def _add_selection(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--selection",
        choices=["topn", "top5", "top-fixed", "topn-sqrt", "topn-2log"],
        help="positive-selection strategy",
    )
    p.add_argument("--top-fixed", type=int, metavar="K", help="select a fixed K positives")


def _add_thresholds(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cls-threshold", type=float)
    p.add_argument("--token-threshold", type=float)
    p.add_argument("--match-threshold", type=float)


def _add_query(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", type=Path, required=True, help="scenario JSON from `generate`")
    p.add_argument("--query", type=int, default=0, help="index into the expression queries")
    p.add_argument(
        "--class-agnostic", action="store_true", help="select positives by the class-only query"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="crexlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"crexlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic scenario")
    _add_common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)

    for name, text in (
        ("train", "train embeddings on one query"),
        ("ablate-loss", "standard vs modified contrastive loss"),
        ("ablate-selection", "compare positive-selection strategies"),
    ):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        _add_query(p)
        _add_selection(p)
        p.add_argument("--steps", type=int)
        p.add_argument("--lr", type=float)

    p = sub.add_parser("evaluate", help="detection counts and point-matching metrics")
    _add_common(p)
    p.add_argument("--scenario", type=Path, required=True)
    _add_thresholds(p)

    p = sub.add_parser("sweep", help="train and evaluate across one scenario parameter")
    _add_common(p)
    _add_selection(p)
    _add_thresholds(p)
    p.add_argument("--axis", required=True, choices=["theta", "kappa", "background", "targets_per_attribute"])
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--threads", type=int)
    return parser


# -- helpers -----------------------------------------------------------------


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    sel = getattr(args, "selection", None)
    k = getattr(args, "top_fixed", None)
    if sel or k is not None:
        if k is not None or sel in ("top5", "top-fixed"):
            strat = SelectionStrategy("top-fixed", fixed_k=k if k is not None else 5)
        else:
            strat = SelectionStrategy(sel)
        cfg = dataclasses.replace(cfg, selection=strat)
    overrides = {}
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = args.steps
    if getattr(args, "lr", None) is not None:
        overrides["learning_rate"] = args.lr
    if overrides:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **overrides))
    th = {}
    if getattr(args, "cls_threshold", None) is not None:
        th["cls_threshold"] = args.cls_threshold
    if getattr(args, "token_threshold", None) is not None:
        th["token_threshold"] = args.token_threshold
    if th:
        cfg = dataclasses.replace(cfg, thresholds=dataclasses.replace(cfg.thresholds, **th))
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out_dir if args.out_dir is not None else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pick_query(scenario, args) -> Query:
    queries = scenario.expression_queries
    if not queries:
        raise ConfigError("scenario has no expression queries", str(args.scenario))
    if not 0 <= args.query < len(queries):
        raise ConfigError(f"query index {args.query} out of range 0..{len(queries) - 1}", "--query")
    q = queries[args.query]
    if args.class_agnostic:
        return scenario.class_query(q.embedding.class_id)
    return q


def _finish(args, cfg, out, outputs, inputs=(), seed=None) -> None:
    write_manifest(
        out,
        args.command,
        {"config": cfg.to_dict(), "argv": getattr(args, "argv", [])},
        seed,
        outputs,
        inputs,
        stamp=not args.no_timestamp,
    )
    for p in outputs:
        log.info("wrote %s", p)


# -- commands ------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _experiment(args)
    spec = cfg.scenario
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    scenario = generate(spec)
    save_scenario(scenario, args.out)
    out = args.out_dir if args.out_dir is not None else args.out.parent
    _finish(args, cfg, out, [args.out], seed=spec.seed)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _experiment(args)
    scenario = load_scenario(args.scenario)
    query = _pick_query(scenario, args)
    out = _out_dir(args, cfg)
    tcfg = cfg.train_config
    status = EXIT_OK
    try:
        trace = train(scenario, query, tcfg)
    except DivergenceDetected as exc:
        log.error("%s", exc)
        trace, status = exc.trace, EXIT_RUNTIME
    rows = [dataclasses.asdict(r) for r in trace.records]
    outputs = [
        write_csv(out / "trace.csv", rows, TRACE_FIELDS, stamp=not args.no_timestamp),
        write_json(out / "summary.json", {"version": 1, "query": query.label, **trace.summary()}),
    ]
    if not args.no_figures:
        from .plotting import plot_traces

        outputs.append(plot_traces({tcfg.contrastive.value: trace}, out / "trace.png"))
    _finish(args, cfg, out, outputs, [args.scenario], tcfg.seed)
    return status


def cmd_ablate_loss(args) -> int:
    cfg = _experiment(args)
    scenario = load_scenario(args.scenario)
    query = _pick_query(scenario, args)
    out = _out_dir(args, cfg)
    tcfg = cfg.train_config
    standard, modified = compare_losses(scenario, query, tcfg)
    rows = loss_ablation_rows(query, standard, modified)
    outputs = [write_csv(out / "ablate_loss.csv", rows, stamp=not args.no_timestamp)]
    if not args.no_figures:
        from .plotting import plot_traces

        outputs.append(
            plot_traces({"standard": standard, "modified": modified}, out / "ablate_loss.png")
        )
    _finish(args, cfg, out, outputs, [args.scenario], tcfg.seed)
    return EXIT_OK


def cmd_ablate_selection(args) -> int:
    cfg = _experiment(args)
    scenario = load_scenario(args.scenario)
    query = _pick_query(scenario, args)
    out = _out_dir(args, cfg)
    strategies = list(DEFAULT_STRATEGIES)
    if args.top_fixed is not None:
        strategies[1] = SelectionStrategy("top-fixed", fixed_k=args.top_fixed)
    rows = ablate_selection(scenario, query, cfg.train, strategies)
    outputs = [write_csv(out / "ablate_selection.csv", rows, stamp=not args.no_timestamp)]
    if not args.no_figures:
        from .plotting import plot_selection_ablation

        outputs.append(plot_selection_ablation(rows, out / "ablate_selection.png"))
    _finish(args, cfg, out, outputs, [args.scenario], cfg.train.seed)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _experiment(args)
    scenario = load_scenario(args.scenario)
    out = _out_dir(args, cfg)
    match = args.match_threshold if args.match_threshold is not None else cfg.metrics.match_threshold
    if match is not None and not match > 0:
        raise ConfigError("must be positive", "--match-threshold")
    result = evaluate_scenario(scenario, cfg.thresholds, match)
    group_rows = [
        {"grouping": g, **row} for g, rows in result["groups"].items() for row in rows
    ]
    stamp = not args.no_timestamp
    outputs = [
        write_csv(out / "evaluation.csv", result["per_query"], stamp=stamp),
        write_csv(out / "groups.csv", group_rows, ["grouping", "group", "n", "mae", "rmse"], stamp=stamp),
        write_json(out / "evaluation.json", {"version": 1, "instance_id": scenario.batch.instance_id, **result}),
    ]
    if not args.no_figures and result["per_query"]:
        from .plotting import plot_counts

        outputs.append(plot_counts(result["per_query"], out / "evaluation.png"))
    _finish(args, cfg, out, outputs, [args.scenario], scenario.spec.seed)
    return EXIT_OK


def _parse_values(text: str, axis: str) -> list:
    try:
        vals = [v.strip() for v in text.split(",") if v.strip()]
        if axis in ("background", "targets_per_attribute"):
            return [int(v) for v in vals]
        return [float(v) for v in vals]
    except ValueError as exc:
        raise ConfigError(str(exc), "--values") from exc


def cmd_sweep(args) -> int:
    cfg = _experiment(args)
    values = _parse_values(args.values, args.axis)
    out = _out_dir(args, cfg)
    try:
        rows = run_sweep(
            cfg.scenario,
            args.axis,
            values,
            cfg.train_config,
            cfg.thresholds,
            args.match_threshold if args.match_threshold is not None else cfg.metrics.match_threshold,
            threads=args.threads,
        )
    except ValueError as exc:
        # axis values that break the scenario invariants, e.g. theta >= pi
        raise ConfigError(str(exc), "--values") from exc
    outputs = [write_csv(out / "sweep.csv", rows, stamp=not args.no_timestamp)]
    if not args.no_figures and rows:
        from .plotting import plot_sweep

        outputs.append(plot_sweep(rows, args.axis, out / "sweep.png"))
    _finish(args, cfg, out, outputs, [], cfg.scenario.seed)
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "ablate-loss": cmd_ablate_loss,
    "ablate-selection": cmd_ablate_selection,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CrexError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # never crash with a traceback on bad input
        print(f"unexpected error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
