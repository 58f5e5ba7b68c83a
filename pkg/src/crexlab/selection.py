"""Pseudo-labelling: split a token batch into positives and negatives.

Every token is scored by cosine similarity against the query embedding and
the ``k`` highest-scoring tokens form the positive set, where ``k`` is derived
from the ground-truth count ``N`` by a :class:`SelectionStrategy`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .embedding import ExpressionEmbedding, TokenBatch, cosine_scores
from .errors import EmptyBatch, MissingLabels


class Variant(str, enum.Enum):
    TOP_N = "topn"
    TOP_FIXED = "top-fixed"
    TOP_N_PLUS_SQRT = "topn-sqrt"
    TOP_N_PLUS_TWO_LOG = "topn-2log"


@dataclass(frozen=True)
class SelectionStrategy:
    variant: Variant = Variant.TOP_N
    n_ground_truth: int = 0
    fixed_k: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.n_ground_truth < 0:
            raise ValueError("n_ground_truth must be non-negative")
        if self.variant is Variant.TOP_FIXED:
            if self.fixed_k is None or self.fixed_k < 1:
                raise ValueError("top-fixed selection needs a positive fixed_k")

    def with_n(self, n: int) -> "SelectionStrategy":
        return SelectionStrategy(self.variant, n, self.fixed_k)

    @property
    def label(self) -> str:
        if self.variant is Variant.TOP_FIXED:
            return f"top{self.fixed_k}"
        return self.variant.value


def resolve(strategy: SelectionStrategy) -> int:
    """Number of tokens the strategy asks for, before clamping to batch size.

    Fractional extras are floored.
    """
    n = strategy.n_ground_truth
    v = strategy.variant
    if v is Variant.TOP_N:
        return n
    if v is Variant.TOP_FIXED:
        return int(strategy.fixed_k)
    if v is Variant.TOP_N_PLUS_SQRT:
        return n + math.isqrt(n)
    # 2*log2(n) is exact for powers of two; guard the floor against 13.999...
    if n < 2:
        return n
    extra = math.floor(2.0 * math.log2(n) + 1e-12)
    return n + extra


@dataclass(frozen=True, eq=False)
class PartitionedBatch:
    positives: tuple
    negatives: tuple
    scores: np.ndarray
    query: ExpressionEmbedding

    @property
    def positive_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.scores), dtype=bool)
        mask[list(self.positives)] = True
        return mask


def score_batch(batch: TokenBatch, query: ExpressionEmbedding) -> np.ndarray:
    return cosine_scores(batch.tokens, query)


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest scores; ties go to the lower index."""
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    return np.sort(order[:k])


def select_positives(
    batch: TokenBatch, query: ExpressionEmbedding, strategy: SelectionStrategy
) -> PartitionedBatch:
    if len(batch) == 0:
        raise EmptyBatch("cannot select from an empty batch")
    scores = score_batch(batch, query)
    k = min(resolve(strategy), len(batch))
    pos = top_k_indices(scores, k)
    mask = np.zeros(len(batch), dtype=bool)
    mask[pos] = True
    scores.setflags(write=False)
    return PartitionedBatch(
        positives=tuple(int(i) for i in pos),
        negatives=tuple(int(i) for i in np.flatnonzero(~mask)),
        scores=scores,
        query=query,
    )


def selection_accuracy(partition: PartitionedBatch, batch: TokenBatch) -> float:
    """Fraction of selected tokens that are true instances of the query.

    An empty positive set scores 1.0; callers that must tell vacuous
    selections apart check ``partition.positives`` themselves.
    """
    if batch.labels is None:
        raise MissingLabels("selection accuracy needs ground-truth labels")
    if not partition.positives:
        return 1.0
    hits = sum(partition.query.refers_to(batch.labels[i]) for i in partition.positives)
    return hits / len(partition.positives)


def true_target_mask(batch: TokenBatch, query: ExpressionEmbedding) -> np.ndarray:
    if batch.labels is None:
        raise MissingLabels("ground-truth labels required")
    return np.array([query.refers_to(lab) for lab in batch.labels], dtype=bool)


def selection_f1(partition: PartitionedBatch, batch: TokenBatch) -> float:
    """Set F1 between the selected tokens and the true instances of the query."""
    truth = true_target_mask(batch, partition.query)
    chosen = partition.positive_mask
    tp = int(np.sum(truth & chosen))
    n_sel, n_true = int(chosen.sum()), int(truth.sum())
    if n_sel == 0 and n_true == 0:
        return 1.0
    if tp == 0:
        return 0.0
    return 2.0 * tp / (n_sel + n_true)
