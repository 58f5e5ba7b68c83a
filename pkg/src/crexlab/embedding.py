"""Embedding vectors, token batches and cosine similarity.

Token embeddings are stored as rows of a float64 array. A :class:`TokenBatch`
holds the candidate tokens of one (scene, expression) instance together with
optional per-token ground truth.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyBatch, ZeroVector

NORM_FLOOR = 1e-30


class QueryKind(str, enum.Enum):
    MASKED_EXPRESSION = "masked_expression"
    CLASS_ONLY = "class_only"


@dataclass(frozen=True)
class TokenLabel:
    class_id: int
    attribute_id: int
    is_target: bool


@dataclass(frozen=True, eq=False)
class ExpressionEmbedding:
    """Query vector scored against image tokens.

    ``class_id``/``attribute_id`` name the referent when known; selection
    accuracy uses them to decide which tokens count as correct. A class-only
    query leaves ``attribute_id`` unset.
    """

    values: np.ndarray
    kind: QueryKind = QueryKind.MASKED_EXPRESSION
    class_id: Optional[int] = None
    attribute_id: Optional[int] = None

    def __post_init__(self):
        v = as_vector(self.values)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "kind", QueryKind(self.kind))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def refers_to(self, label: TokenLabel) -> bool:
        """True if ``label`` is an instance this query is asking for."""
        if not label.is_target:
            return False
        if self.class_id is None:
            return True
        if label.class_id != self.class_id:
            return False
        if self.kind is QueryKind.CLASS_ONLY or self.attribute_id is None:
            return True
        return label.attribute_id == self.attribute_id


@dataclass(frozen=True, eq=False)
class TokenBatch:
    tokens: np.ndarray
    labels: Optional[tuple] = None
    instance_id: str = ""
    points: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        t = np.array(self.tokens, dtype=np.float64)
        if t.ndim == 1:
            t = t[None, :]
        if t.ndim != 2 or t.shape[0] == 0 or t.shape[1] == 0:
            raise EmptyBatch("token batch must be a non-empty (n, D) array")
        if not np.all(np.isfinite(t)):
            raise ValueError("token embeddings must be finite")
        t.setflags(write=False)
        object.__setattr__(self, "tokens", t)
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != t.shape[0]:
                raise ValueError(
                    f"labels length {len(labels)} != token count {t.shape[0]}"
                )
            object.__setattr__(self, "labels", labels)
        if self.points is not None:
            points = tuple(self.points)
            if len(points) != t.shape[0]:
                raise ValueError("points length must match token count")
            object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    def with_tokens(self, tokens: np.ndarray) -> "TokenBatch":
        return TokenBatch(tokens, self.labels, self.instance_id, self.points)

    def permuted(self, order: Sequence[int]) -> "TokenBatch":
        order = list(order)
        labels = None if self.labels is None else [self.labels[i] for i in order]
        points = None if self.points is None else [self.points[i] for i in order]
        return TokenBatch(self.tokens[order], labels, self.instance_id, points)


def as_vector(v) -> np.ndarray:
    a = np.array(v, dtype=np.float64).reshape(-1)
    if a.size == 0:
        raise ValueError("empty vector")
    if not np.all(np.isfinite(a)):
        raise ValueError("vector entries must be finite")
    return a


def normalize(v) -> np.ndarray:
    """Scale ``v`` to unit L2 norm.

    Raises:
        ZeroVector: if every entry is zero or the norm underflows.
    """
    a = as_vector(v)
    norm = float(np.linalg.norm(a))
    if norm < NORM_FLOOR:
        raise ZeroVector("cannot normalize a zero vector")
    return a / norm


def normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise ZeroVector("cannot normalize a zero row")
    return x / norms


def cosine_similarity(z, t) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1].

    Accepts raw arrays or :class:`ExpressionEmbedding` instances.
    """
    a = as_vector(getattr(z, "values", z))
    b = as_vector(getattr(t, "values", t))
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimensions differ: {a.shape[0]} vs {b.shape[0]}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    # sorted norm product keeps the result exactly symmetric
    denom = min(na, nb) * max(na, nb)
    return float(np.clip(np.dot(a, b) / denom, -1.0, 1.0))


def cosine_scores(tokens: np.ndarray, query) -> np.ndarray:
    """Cosine of every row of ``tokens`` against ``query``."""
    q = as_vector(getattr(query, "values", query))
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.shape[-1] != q.shape[0]:
        raise DimensionMismatch(
            f"token dimension {tokens.shape[-1]} != query dimension {q.shape[0]}"
        )
    qn = np.linalg.norm(q)
    tn = np.linalg.norm(tokens, axis=-1)
    if qn < NORM_FLOOR or np.any(tn < NORM_FLOOR):
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return np.clip(tokens @ q / (tn * qn), -1.0, 1.0)
