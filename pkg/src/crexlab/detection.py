"""Turn token scores into detections and a predicted count.

A token is detected when its mapped similarity to the class query clears
``cls_threshold`` and its mapped similarity to the expression query clears
``token_threshold``. Cosine scores are mapped to [0, 1] by ``(y + 1) / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import ExpressionEmbedding, TokenBatch
from .errors import BatchTooLarge
from .selection import score_batch

# cosine of a vector with itself can round to 1 - 2**-52
SCORE_ATOL = 1e-12


@dataclass(frozen=True)
class ThresholdConfig:
    cls_threshold: float = 0.30
    token_threshold: float = 0.36
    max_queries: int = 900

    def __post_init__(self):
        for name in ("cls_threshold", "token_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.max_queries < 1:
            raise ValueError("max_queries must be positive")


def mapped_scores(batch: TokenBatch, query: ExpressionEmbedding) -> np.ndarray:
    return (score_batch(batch, query) + 1.0) / 2.0


def detect(
    batch: TokenBatch,
    query: ExpressionEmbedding,
    class_query: ExpressionEmbedding,
    config: ThresholdConfig = ThresholdConfig(),
) -> tuple:
    """Return ``(detected token indices, predicted count)``."""
    if len(batch) > config.max_queries:
        raise BatchTooLarge(f"batch of {len(batch)} exceeds max_queries={config.max_queries}")
    expr = mapped_scores(batch, query)
    cls = mapped_scores(batch, class_query)
    hits = np.flatnonzero(
        (cls >= config.cls_threshold - SCORE_ATOL) & (expr >= config.token_threshold - SCORE_ATOL)
    )
    return [int(i) for i in hits], int(hits.size)
