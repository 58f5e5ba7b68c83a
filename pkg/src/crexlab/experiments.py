"""Experiment drivers behind the CLI: loss and selection ablations, detection
evaluation of a scenario, and parameter sweeps."""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .detection import ThresholdConfig, detect
from .errors import DivergenceDetected
from .metrics import (
    CountPair,
    Grouping,
    PointMatchResult,
    default_match_threshold,
    f1,
    grouped_report,
    mae,
    match_points,
    rmse,
)
from .selection import SelectionStrategy, resolve
from .synthworld import Query, Scenario, ScenarioSpec, generate, sweep_specs
from .trainer import TrainConfig, TrainTrace, compare_losses, train

DEFAULT_STRATEGIES = (
    SelectionStrategy("topn"),
    SelectionStrategy("top-fixed", fixed_k=5),
    SelectionStrategy("topn-sqrt"),
    SelectionStrategy("topn-2log"),
)

THREADS_ENV = "CREX_LAB_THREADS"


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get(THREADS_ENV)
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_jobs))


def _final_row(trace: TrainTrace) -> dict:
    init, last = trace.initial, trace.final
    return {
        "final_loss": last.loss,
        "initial_selection_accuracy": init.selection_accuracy,
        "final_selection_accuracy": last.selection_accuracy,
        "final_selection_f1": last.selection_f1,
        "final_topn_f1": last.topn_f1,
        "final_intra_positive": last.intra_positive,
        "final_cross": last.cross,
        "final_intra_negative": last.intra_negative,
        "initial_margin": init.margin,
        "final_margin": last.margin,
        "diverged": trace.diverged,
    }


def loss_ablation_rows(query: Query, standard: TrainTrace, modified: TrainTrace) -> list:
    return [
        {"loss": "standard", "query": query.label, **_final_row(standard)},
        {"loss": "modified", "query": query.label, **_final_row(modified)},
    ]


def ablate_loss(scenario: Scenario, query: Query, config: TrainConfig) -> list:
    """Paired rows: the two-class standard loss, then the positives-only loss."""
    return loss_ablation_rows(query, *compare_losses(scenario, query, config))


def ablate_selection(
    scenario: Scenario,
    query: Query,
    config: TrainConfig,
    strategies: Sequence[SelectionStrategy] = DEFAULT_STRATEGIES,
) -> list:
    """Train once per selection strategy; ``final_topn_f1`` scores the trained
    embeddings with exact-N selection, whatever strategy drove training."""
    rows = []
    for strat in strategies:
        trace = train(scenario, query, dataclasses.replace(config, selection=strat))
        rows.append(
            {
                "strategy": strat.label,
                "query": query.label,
                "k": min(len(scenario.batch), resolve(strat.with_n(query.n))),
                **_final_row(trace),
            }
        )
    return rows


@dataclass(frozen=True)
class QueryEvaluation:
    query: str
    pair: CountPair
    match: PointMatchResult
    threshold: float

    @property
    def prf(self) -> tuple:
        return f1(self.match)


def evaluate_query(
    scenario: Scenario,
    query: Query,
    thresholds: ThresholdConfig,
    match_threshold: Optional[float] = None,
) -> QueryEvaluation:
    batch = scenario.batch
    class_q = scenario.class_query(query.embedding.class_id).embedding
    hits, count = detect(batch, query.embedding, class_q, thresholds)
    gt = scenario.target_points(query.embedding)
    located = [i for i in hits if batch.points[i] is not None]
    pred = np.array([batch.points[i] for i in located], dtype=np.float64).reshape(-1, 2)
    delta = match_threshold if match_threshold is not None else default_match_threshold(gt)
    m = match_points(pred, gt, delta)
    # detections of background tokens have no location and are always false positives
    n_bg = len(hits) - len(located)
    if n_bg:
        extra = tuple(range(len(pred), len(pred) + n_bg))
        m = PointMatchResult(m.matched, m.unmatched_predictions + extra, m.unmatched_ground_truth)
    pair = CountPair(
        query.n,
        count,
        f"{batch.instance_id}/{query.label}",
        query.attribute_name if query.attribute_name is not None else query.class_name,
    )
    return QueryEvaluation(query.label, pair, m, delta)


def evaluate_scenario(
    scenario: Scenario,
    thresholds: ThresholdConfig = ThresholdConfig(),
    match_threshold: Optional[float] = None,
) -> dict:
    evals = [evaluate_query(scenario, q, thresholds, match_threshold) for q in scenario.expression_queries]
    pairs = [e.pair for e in evals]
    rows = []
    for e in evals:
        p, r, f = e.prf
        rows.append(
            {
                "query": e.query,
                "ground_truth": e.pair.ground_truth,
                "predicted": e.pair.predicted,
                "tp": e.match.tp,
                "fp": e.match.fp,
                "fn": e.match.fn,
                "precision": p,
                "recall": r,
                "f1": f,
                "match_threshold": e.threshold,
            }
        )
    summary = {
        "n": len(pairs),
        "mae": mae(pairs) if pairs else None,
        "rmse": rmse(pairs) if pairs else None,
        "mean_f1": float(np.mean([r["f1"] for r in rows])) if rows else None,
    }
    groups = {}
    if pairs:
        for g in Grouping:
            groups[g.value] = [dataclasses.asdict(r) for r in grouped_report(pairs, g)]
    return {"per_query": rows, "summary": summary, "groups": groups}


def _sweep_point(args) -> dict:
    axis, value, spec, config, thresholds, match_threshold = args
    scenario = generate(spec)
    query = scenario.expression_queries[0]
    row = {"axis": axis, "value": value, "seed": spec.seed}
    try:
        trace = train(scenario, query, config)
    except DivergenceDetected as exc:
        trace = exc.trace
    row.update(_final_row(trace))
    ev = evaluate_scenario(scenario, thresholds, match_threshold)["summary"]
    row.update({"mae": ev["mae"], "rmse": ev["rmse"], "mean_f1": ev["mean_f1"]})
    return row


def run_sweep(
    template: ScenarioSpec,
    axis: str,
    values: Sequence,
    config: TrainConfig,
    thresholds: ThresholdConfig = ThresholdConfig(),
    match_threshold: Optional[float] = None,
    threads: Optional[int] = None,
) -> list:
    """One row per sweep value, in input order regardless of worker scheduling."""
    specs = sweep_specs(template, axis, values)
    jobs = [(axis, v, s, config, thresholds, match_threshold) for v, s in zip(values, specs)]
    if not jobs:
        return []
    workers = threads if threads is not None else worker_count(len(jobs))
    if workers <= 1:
        return [_sweep_point(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_sweep_point, jobs))
