"""Gradient descent on token embeddings under the composite counting loss.

The trainable parameters are the token embeddings themselves (kept on the
unit sphere by renormalising after every update) or, with ``projection=True``,
a shared linear map applied to frozen embeddings. Detection losses act on a
classification head built from query similarity and on per-target point
offsets, so every term of the weighted sum contributes a gradient.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .embedding import ExpressionEmbedding, TokenBatch, normalize_rows
from .errors import DivergenceDetected
from .losses import (
    LossConfig,
    LossReport,
    cls_loss,
    composite_loss,
    contrastive_from_mask,
    loc_loss,
    positives_only_mask,
    two_class_mask,
)
from .selection import (
    PartitionedBatch,
    SelectionStrategy,
    select_positives,
    selection_accuracy,
    selection_f1,
    true_target_mask,
)
from .synthworld import Query, Scenario

DIVERGENCE_LIMIT = 1e6


class ContrastiveKind(str, enum.Enum):
    MODIFIED = "modified"
    STANDARD = "standard"


class Optimizer(str, enum.Enum):
    SGD = "sgd"
    MOMENTUM = "momentum"


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    learning_rate: float = 0.05
    optimizer: Optimizer = Optimizer.SGD
    momentum: float = 0.9
    loss: LossConfig = field(default_factory=LossConfig)
    selection: SelectionStrategy = field(default_factory=SelectionStrategy)
    contrastive: ContrastiveKind = ContrastiveKind.MODIFIED
    freeze_selection: bool = False
    seed: int = 0
    log_interval: int = 10
    projection: bool = False
    cls_scale: float = 10.0
    offset_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        object.__setattr__(self, "contrastive", ContrastiveKind(self.contrastive))
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")
        if not self.cls_scale > 0 or self.offset_scale < 0:
            raise ValueError("cls_scale must be positive and offset_scale non-negative")


@dataclass(frozen=True)
class TraceRecord:
    step: int
    loss: float
    anchors_used: int
    selection_accuracy: float
    selection_f1: float
    topn_f1: float
    intra_positive: float
    cross: float
    intra_negative: float
    margin: float
    grad_norm: float


TRACE_FIELDS = tuple(f.name for f in dataclasses.fields(TraceRecord))


@dataclass(frozen=True, eq=False)
class TrainTrace:
    records: tuple
    final_tokens: np.ndarray
    initial_tokens: np.ndarray
    scenario: Scenario
    diverged: bool = False

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    @property
    def initial(self) -> TraceRecord:
        return self.records[0]

    def summary(self) -> dict:
        # a run that diverges at step 0 has no records
        last = self.records[-1] if self.records else None
        return {
            "final_margin": None if last is None else last.margin,
            "final_selection_accuracy": None if last is None else last.selection_accuracy,
            "steps": 0 if last is None else last.step,
            "divergence_flag": self.diverged,
        }


def _pair_means(sim: np.ndarray, a: np.ndarray, b: Optional[np.ndarray] = None) -> float:
    if b is None:
        if a.size < 2:
            return 0.0
        block = sim[np.ix_(a, a)]
        return float((block.sum() - np.trace(block)) / (a.size * (a.size - 1)))
    if a.size == 0 or b.size == 0:
        return 0.0
    return float(sim[np.ix_(a, b)].mean())


def separation_stats(z: np.ndarray, partition: PartitionedBatch) -> dict:
    """Mean cosines within I+, between I+ and I-, and within I-."""
    sim = z @ z.T
    pos = np.asarray(partition.positives, dtype=int)
    neg = np.asarray(partition.negatives, dtype=int)
    intra = _pair_means(sim, pos)
    cross = _pair_means(sim, pos, neg)
    return {
        "intra_positive": intra,
        "cross": cross,
        "intra_negative": _pair_means(sim, neg),
        "margin": intra - cross,
    }


class _Problem:
    """Everything the objective needs that stays fixed during a run."""

    def __init__(self, scenario: Scenario, query: ExpressionEmbedding, n: int, config: TrainConfig):
        self.scenario = scenario
        self.query = query
        self.config = config
        self.strategy = config.selection.with_n(n)
        self.truth = true_target_mask(scenario.batch, query)
        self.cls_labels = np.where(self.truth, 0, 1)
        self.target_idx = np.flatnonzero(self.truth)
        pts = scenario.batch.points
        has_point = [pts is not None and pts[i] is not None for i in self.target_idx]
        self.loc_idx = self.target_idx[np.array(has_point, dtype=bool)]
        self.target_points = np.array(
            [pts[i] for i in self.loc_idx], dtype=np.float64
        ).reshape(-1, 2)
        self.qhat = query.values / np.linalg.norm(query.values)

    def contrastive_mask(self, partition: PartitionedBatch) -> np.ndarray:
        n = len(partition.scores)
        if self.config.contrastive is ContrastiveKind.MODIFIED:
            return positives_only_mask(n, partition.positives)
        return two_class_mask(n, partition.positives)

    def objective(self, h: np.ndarray, offsets: np.ndarray, partition: PartitionedBatch) -> LossReport:
        """Composite loss at pre-normalisation embeddings ``h``.

        Returns gradients under ``"embeddings"`` (with respect to ``h``) and
        ``"points"`` (with respect to the point offsets).
        """
        cfg = self.config.loss
        con = contrastive_from_mask(
            h, self.contrastive_mask(partition), cfg.temperature, cfg.normalize_inputs
        )

        norms = np.linalg.norm(h, axis=1, keepdims=True)
        z = h / norms
        y = z @ self.qhat
        s = self.config.cls_scale
        logits = np.column_stack([s * y, -s * y])
        cls_raw = cls_loss(logits, self.cls_labels)
        g = cls_raw.grads["logits"]
        dy = s * (g[:, 0] - g[:, 1])
        grad_h = dy[:, None] * (self.qhat[None, :] - y[:, None] * z) / norms
        cls = LossReport(cls_raw.value, {"embeddings": grad_h})

        if len(self.target_points):
            pairs = [(i, i) for i in range(len(self.target_points))]
            loc = loc_loss(self.target_points + offsets, self.target_points, pairs)
        else:
            loc = LossReport(0.0, {"points": np.zeros((0, 2))}, empty=True)
        return composite_loss(loc, cls, con, cfg)

    def record(
        self, step: int, z: np.ndarray, partition: PartitionedBatch, report: LossReport, grad_norm: float
    ) -> TraceRecord:
        batch = TokenBatch(z, self.scenario.batch.labels, self.scenario.batch.instance_id)
        topn = select_positives(batch, self.query, SelectionStrategy("topn", int(self.truth.sum())))
        stats = separation_stats(z, partition)
        return TraceRecord(
            step=step,
            loss=float(report.value),
            anchors_used=int(report.anchors_used),
            selection_accuracy=selection_accuracy(partition, batch),
            selection_f1=selection_f1(partition, batch),
            topn_f1=selection_f1(topn, batch),
            grad_norm=grad_norm,
            **stats,
        )


def _resolve_query(scenario: Scenario, query: Union[Query, ExpressionEmbedding]):
    if isinstance(query, Query):
        return query.embedding, query.n
    return query, int(true_target_mask(scenario.batch, query).sum())


def train(
    scenario: Scenario, query: Union[Query, ExpressionEmbedding], config: TrainConfig
) -> TrainTrace:
    """Optimise the scenario's token embeddings for one query.

    Raises:
        DivergenceDetected: loss above 1e6 or non-finite; ``exc.trace`` holds
            the partial trace.
    """
    emb, n = _resolve_query(scenario, query)
    prob = _Problem(scenario, emb, n, config)
    rng = np.random.default_rng(config.seed)

    x0 = normalize_rows(scenario.batch.tokens)
    x = x0.copy()
    w = np.eye(x.shape[1])
    offsets = rng.normal(0.0, config.offset_scale, size=prob.target_points.shape)
    vel_main = np.zeros_like(w if config.projection else x)
    vel_off = np.zeros_like(offsets)

    def embed():
        return x @ w.T if config.projection else x

    def select(z):
        return select_positives(
            TokenBatch(z, scenario.batch.labels, scenario.batch.instance_id), emb, prob.strategy
        )

    frozen = None
    records = []

    def snapshot(diverged=False):
        final = normalize_rows(embed()) if config.projection else x.copy()
        return TrainTrace(tuple(records), final, x0, scenario.with_tokens(final), diverged)

    for step in range(config.steps + 1):
        h = embed()
        z = normalize_rows(h)
        if config.freeze_selection:
            if frozen is None:
                frozen = select(z)
            partition = frozen
        else:
            partition = select(z)
        report = prob.objective(h, offsets, partition)

        g_emb = report.grads["embeddings"]
        g_off = report.grads.get("points", np.zeros_like(offsets))
        g_main = g_emb.T @ x if config.projection else g_emb
        grad_norm = float(np.sqrt(np.sum(g_main**2) + np.sum(g_off**2)))

        if not np.isfinite(report.value) or report.value > DIVERGENCE_LIMIT or not np.isfinite(grad_norm):
            raise DivergenceDetected(
                f"loss {report.value} at step {step}", trace=snapshot(diverged=True)
            )
        if step % config.log_interval == 0 or step == config.steps:
            records.append(prob.record(step, z, partition, report, grad_norm))
        if step == config.steps:
            break

        lr = config.learning_rate
        if lr == 0:
            # renormalising unit rows would still move them by an ulp
            continue
        if config.optimizer is Optimizer.MOMENTUM:
            vel_main = config.momentum * vel_main + g_main
            vel_off = config.momentum * vel_off + g_off
            step_main, step_off = vel_main, vel_off
        else:
            step_main, step_off = g_main, g_off
        if config.projection:
            w = w - lr * step_main
        else:
            x = normalize_rows(x - lr * step_main)
        offsets = offsets - lr * step_off

    return snapshot()


def compare_losses(
    scenario: Scenario, query: Union[Query, ExpressionEmbedding], config: TrainConfig
) -> tuple:
    """Train twice from the same start: two-class standard loss, then the modified loss."""
    standard = train(scenario, query, dataclasses.replace(config, contrastive=ContrastiveKind.STANDARD))
    modified = train(scenario, query, dataclasses.replace(config, contrastive=ContrastiveKind.MODIFIED))
    return standard, modified
