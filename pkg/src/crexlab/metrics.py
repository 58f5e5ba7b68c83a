"""Counting and localization metrics.

Count errors are summarised by MAE and RMSE. Localization quality uses a
one-to-one matching between predicted and ground-truth points: a prediction
is a true positive only if it is matched to a distinct ground-truth point
within distance ``threshold``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import EmptyInput, MissingCategory

COUNT_BINS = (("0-20", 0, 20), ("21-50", 21, 50), ("51-100", 51, 100), ("100+", 101, None))
MIN_MATCH_THRESHOLD = 0.5


@dataclass(frozen=True)
class CountPair:
    ground_truth: int
    predicted: int
    instance_id: str = ""
    category: Optional[str] = None

    def __post_init__(self):
        if self.ground_truth < 0 or self.predicted < 0:
            raise ValueError("counts must be non-negative")

    @property
    def count_bin(self) -> str:
        for name, lo, hi in COUNT_BINS:
            if self.ground_truth >= lo and (hi is None or self.ground_truth <= hi):
                return name
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class PointMatchResult:
    matched: tuple = ()
    unmatched_predictions: tuple = ()
    unmatched_ground_truth: tuple = ()

    @property
    def tp(self) -> int:
        return len(self.matched)

    @property
    def fp(self) -> int:
        return len(self.unmatched_predictions)

    @property
    def fn(self) -> int:
        return len(self.unmatched_ground_truth)


def _errors(pairs: Sequence[CountPair]) -> np.ndarray:
    if len(pairs) == 0:
        raise EmptyInput("no count pairs given")
    return np.array([p.ground_truth - p.predicted for p in pairs], dtype=np.float64)


def mae(pairs: Sequence[CountPair]) -> float:
    return float(np.mean(np.abs(_errors(pairs))))


def rmse(pairs: Sequence[CountPair]) -> float:
    return float(math.sqrt(np.mean(_errors(pairs) ** 2)))


def match_points(predictions, ground_truth, threshold: float) -> PointMatchResult:
    """Maximum-cardinality, minimum-total-distance matching within ``threshold``.

    Pairs farther apart than ``threshold`` may not be matched. Among all
    matchings with the most pairs, the one with smallest summed distance wins.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    pred = np.asarray(predictions, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 2)
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(gt))):
        raise ValueError("point coordinates must be finite")
    if len(pred) == 0 or len(gt) == 0:
        return PointMatchResult((), tuple(range(len(pred))), tuple(range(len(gt))))

    dist = cdist(pred, gt)
    allowed = dist <= threshold
    # any forbidden pair costs more than a full matching of allowed ones,
    # so the solver maximises the number of allowed pairs first
    big = (min(dist.shape) + 1) * (threshold + 1.0)
    cost = np.where(allowed, dist, big)
    rows, cols = linear_sum_assignment(cost)
    keep = allowed[rows, cols]
    matched = tuple(
        (int(r), int(c), float(dist[r, c])) for r, c in zip(rows[keep], cols[keep])
    )
    used_p = {m[0] for m in matched}
    used_g = {m[1] for m in matched}
    return PointMatchResult(
        matched,
        tuple(i for i in range(len(pred)) if i not in used_p),
        tuple(j for j in range(len(gt)) if j not in used_g),
    )


def f1(match: PointMatchResult) -> tuple:
    """(precision, recall, F1) of a point matching.

    Empty predictions and empty ground truth together score (1, 1, 1).
    """
    tp, fp, fn = match.tp, match.fp, match.fn
    if tp + fp == 0 and tp + fn == 0:
        return 1.0, 1.0, 1.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    score = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, score


def default_match_threshold(ground_truth) -> float:
    """Half the median nearest-neighbour spacing of the ground truth, floored at 0.5."""
    gt = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 2)
    if len(gt) < 2:
        return MIN_MATCH_THRESHOLD
    d = cdist(gt, gt)
    np.fill_diagonal(d, np.inf)
    return max(MIN_MATCH_THRESHOLD, 0.5 * float(np.median(d.min(axis=1))))


class Grouping(str, enum.Enum):
    COUNT_RANGE = "count_range"
    ATTRIBUTE_CATEGORY = "attribute_category"


@dataclass(frozen=True)
class GroupRow:
    group: str
    n: int
    mae: float
    rmse: float


def grouped_report(pairs: Sequence[CountPair], grouping) -> list:
    """Per-group MAE/RMSE rows.

    Count-range groups follow the fixed bin order; attribute categories are
    sorted by name. Groups with no members are left out.
    """
    grouping = Grouping(grouping)
    if grouping is Grouping.COUNT_RANGE:
        keys = [p.count_bin for p in pairs]
        order = [name for name, _, _ in COUNT_BINS]
    else:
        missing = [p.instance_id for p in pairs if p.category is None]
        if missing:
            raise MissingCategory(f"pairs without category: {missing[:5]}")
        keys = [p.category for p in pairs]
        order = sorted(set(keys))
    rows = []
    for name in order:
        members = [p for p, k in zip(pairs, keys) if k == name]
        if members:
            rows.append(GroupRow(name, len(members), mae(members), rmse(members)))
    return rows
