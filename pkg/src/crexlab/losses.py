"""Contrastive and detection losses with hand-derived gradients.

All contrastive losses share one kernel. For an anchor ``i`` with positive set
``P(i)`` and logits ``s_ia = z_i . z_a / tau`` over ``a != i`` the anchor term is::

    log sum_{a != i} exp(s_ia) - log sum_{p in P(i)} exp(s_ip) + log |P(i)|

Its derivative with respect to ``s_ia`` is ``q_ia - w_ia`` where ``q`` is the
softmax over all other tokens and ``w`` the softmax restricted to ``P(i)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .embedding import NORM_FLOOR, TokenBatch
from .errors import (
    BatchTooSmall,
    LabelOutOfRange,
    TemperatureNonPositive,
    ZeroVector,
)
from .selection import PartitionedBatch


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.07
    lambda_loc: float = 1.0
    lambda_cls: float = 5.0
    lambda_c: float = 0.005
    normalize_inputs: bool = True

    def __post_init__(self):
        if not self.temperature > 0:
            raise TemperatureNonPositive(f"temperature must be > 0, got {self.temperature}")
        for name in ("lambda_loc", "lambda_cls", "lambda_c"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True, eq=False)
class LossReport:
    """A loss value and its gradients, keyed by the parameter they belong to.

    Contrastive losses report ``"embeddings"``, the classification loss
    ``"logits"`` and the localization loss ``"points"``.
    """

    value: float
    grads: Mapping[str, np.ndarray] = field(default_factory=dict)
    anchors_used: int = 0
    terms: Optional[np.ndarray] = None
    empty: bool = False

    @property
    def gradients(self) -> Optional[np.ndarray]:
        if "embeddings" in self.grads:
            return self.grads["embeddings"]
        if len(self.grads) == 1:
            return next(iter(self.grads.values()))
        return None


# -- contrastive ------------------------------------------------------------


def _positive_mask(n: int, positive_sets: Sequence[Iterable[int]]) -> np.ndarray:
    if len(positive_sets) != n:
        raise ValueError(f"need one positive set per token ({n}), got {len(positive_sets)}")
    mask = np.zeros((n, n), dtype=bool)
    for i, ps in enumerate(positive_sets):
        for p in ps:
            p = int(p)
            if p == i:
                raise ValueError(f"positive set of anchor {i} contains the anchor")
            if not 0 <= p < n:
                raise IndexError(f"positive index {p} out of range")
            mask[i, p] = True
    return mask


def _project_to_raw(x: np.ndarray, z: np.ndarray, grad_z: np.ndarray) -> np.ndarray:
    # Jacobian of x -> x/|x| is (I - z z^T)/|x|
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    radial = np.sum(grad_z * z, axis=1, keepdims=True)
    return (grad_z - radial * z) / norms


def _rescaled_row(logits, pmask, others):
    pl = np.where(pmask, logits, -np.inf)
    ep = np.exp(pl - pl.max())
    al = np.where(others, logits, -np.inf)
    am = al.max()
    lse_all = am + np.log(np.exp(al - am).sum())
    lse_pos = pl.max() + np.log(ep.sum())
    return max(lse_all - lse_pos, 0.0), ep / ep.sum()


def contrastive_from_mask(
    x: np.ndarray, mask: np.ndarray, temperature: float, normalize: bool = True
) -> LossReport:
    """Supervised contrastive loss for the anchors with a non-empty mask row.

    ``mask[i, p]`` marks ``p`` as a positive of anchor ``i``; the diagonal
    must be false. Gradients are with respect to the raw rows of ``x``.
    """
    if not temperature > 0:
        raise TemperatureNonPositive(f"temperature must be > 0, got {temperature}")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise BatchTooSmall("contrastive losses need at least two tokens")
    if normalize:
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        if np.any(norms < NORM_FLOOR):
            raise ZeroVector("cannot normalize a zero token")
        z = x / norms
    else:
        z = x

    anchors = np.flatnonzero(mask.any(axis=1))
    terms = np.zeros(n)
    grad_z = np.zeros_like(z)
    if anchors.size == 0:
        return LossReport(0.0, {"embeddings": grad_z}, 0, terms)

    logits = (z[anchors] @ z.T) / temperature
    others = np.ones((anchors.size, n), dtype=bool)
    others[np.arange(anchors.size), anchors] = False
    pmask = mask[anchors]

    shifted = np.where(others, logits, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    sum_pos = np.where(pmask, e, 0.0).sum(axis=1)
    sum_rest = np.where(others & ~pmask, e, 0.0).sum(axis=1)
    # positives first, so sum_all >= sum_pos survives rounding
    sum_all = sum_pos + sum_rest
    n_pos = pmask.sum(axis=1)

    ok = sum_pos > 0.0
    safe_pos = np.where(ok, sum_pos, 1.0)
    t = np.log(sum_all) - np.log(safe_pos) + np.log(n_pos)
    q = e / sum_all[:, None]
    w = np.where(pmask, e, 0.0) / safe_pos[:, None]
    for r in np.flatnonzero(~ok):
        # positives underflowed against the row max
        t[r], w[r] = _rescaled_row(logits[r], pmask[r], others[r])
        t[r] += np.log(n_pos[r])

    g = np.zeros((n, n))
    g[anchors] = q - w
    grad_z = (g @ z + g.T @ z) / temperature

    terms[anchors] = t
    grad = _project_to_raw(x, z, grad_z) if normalize else grad_z
    return LossReport(float(t.sum()), {"embeddings": grad}, int(anchors.size), terms)


def sup_con_loss(
    batch: TokenBatch, positive_sets: Sequence[Iterable[int]], config: LossConfig
) -> LossReport:
    """Standard supervised contrastive loss over every anchor in the batch.

    Anchors whose positive set is empty contribute nothing and are not
    counted in ``anchors_used``.
    """
    n = len(batch)
    if n < 2:
        raise BatchTooSmall("contrastive losses need at least two tokens")
    mask = _positive_mask(n, positive_sets)
    return contrastive_from_mask(batch.tokens, mask, config.temperature, config.normalize_inputs)


def positives_only_mask(n: int, positives: Iterable[int]) -> np.ndarray:
    idx = np.fromiter(positives, dtype=int)
    mask = np.zeros((n, n), dtype=bool)
    mask[np.ix_(idx, idx)] = True
    np.fill_diagonal(mask, False)
    return mask


def two_class_mask(n: int, positives: Iterable[int]) -> np.ndarray:
    """Positives pull positives, negatives pull negatives."""
    pos = np.zeros(n, dtype=bool)
    pos[list(positives)] = True
    mask = pos[:, None] == pos[None, :]
    np.fill_diagonal(mask, False)
    return mask


def two_class_positive_sets(partition: PartitionedBatch) -> list:
    n = len(partition.scores)
    mask = two_class_mask(n, partition.positives)
    return [tuple(np.flatnonzero(row)) for row in mask]


def modified_sup_con_loss(
    partition: PartitionedBatch, batch: TokenBatch, config: LossConfig
) -> LossReport:
    """Supervised contrastive loss that only uses selected positives as anchors.

    Each positive anchor is pulled towards the other positives while the
    denominator still runs over the whole batch, so negatives are pushed away
    from positives but never pulled towards each other.
    """
    n = len(batch)
    if n < 2:
        raise BatchTooSmall("contrastive losses need at least two tokens")
    if len(partition.scores) != n:
        raise ValueError("partition does not belong to this batch")
    mask = positives_only_mask(n, partition.positives)
    return contrastive_from_mask(batch.tokens, mask, config.temperature, config.normalize_inputs)


# -- detection losses ---------------------------------------------------------


def loc_loss(predicted, targets, assignment) -> LossReport:
    """Mean L1 distance between assigned (prediction, target) point pairs.

    With no pairs the value is 0 and ``empty`` is set.
    """
    pred = np.asarray(predicted, dtype=np.float64).reshape(-1, 2)
    tgt = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(tgt))):
        raise ValueError("point coordinates must be finite")
    pairs = np.asarray(list(assignment), dtype=int).reshape(-1, 2)
    grad = np.zeros_like(pred)
    if pairs.shape[0] == 0:
        warnings.warn("loc_loss called with an empty assignment", RuntimeWarning, stacklevel=2)
        return LossReport(0.0, {"points": grad}, empty=True)
    pi, ti = pairs[:, 0], pairs[:, 1]
    if pi.min() < 0 or pi.max() >= len(pred) or ti.min() < 0 or ti.max() >= len(tgt):
        raise IndexError("assignment index out of range")
    diff = pred[pi] - tgt[ti]
    m = pairs.shape[0]
    value = float(np.abs(diff).sum() / m)
    np.add.at(grad, pi, np.sign(diff) / m)
    return LossReport(value, {"points": grad})


def cls_loss(logits, labels) -> LossReport:
    """Mean cross-entropy; gradient is ``softmax - onehot`` over the token count."""
    lg = np.asarray(logits, dtype=np.float64)
    if lg.ndim != 2:
        raise ValueError("logits must be (n_tokens, n_classes)")
    if not np.all(np.isfinite(lg)):
        raise ValueError("logits must be finite")
    y = np.asarray(labels, dtype=int).reshape(-1)
    n, c = lg.shape
    if y.shape[0] != n:
        raise ValueError("one label per token required")
    if n == 0:
        return LossReport(0.0, {"logits": lg.copy()}, empty=True)
    if y.min() < 0 or y.max() >= c:
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    m = lg.max(axis=1, keepdims=True)
    e = np.exp(lg - m)
    s = e.sum(axis=1, keepdims=True)
    log_softmax = lg - m - np.log(s)
    rows = np.arange(n)
    value = float(-log_softmax[rows, y].sum() / n)
    grad = e / s
    grad[rows, y] -= 1.0
    return LossReport(value, {"logits": grad / n})


def composite_loss(
    loc: LossReport, cls: LossReport, contrastive: LossReport, config: LossConfig
) -> LossReport:
    """Weighted sum of the three losses; gradients sharing a key are summed."""
    parts = (
        (config.lambda_loc, loc),
        (config.lambda_cls, cls),
        (config.lambda_c, contrastive),
    )
    value = 0.0
    grads: dict = {}
    for weight, rep in parts:
        value += weight * rep.value
        for key, g in rep.grads.items():
            if key in grads:
                if grads[key].shape != g.shape:
                    raise ValueError(f"gradient shapes for {key!r} disagree")
                grads[key] = grads[key] + weight * g
            else:
                grads[key] = weight * np.asarray(g)
    anchors = contrastive.anchors_used if config.lambda_c != 0 else 0
    return LossReport(float(value), grads, anchors)


# -- finite differences --------------------------------------------------------


def finite_difference_gradient(
    loss_fn: Callable[[np.ndarray], object], batch, epsilon: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of ``loss_fn`` at the batch embeddings.

    ``batch`` may be a :class:`TokenBatch` or any float array; ``loss_fn``
    receives an array of the same shape and returns a float or a
    :class:`LossReport`.
    """
    if not 1e-8 < epsilon < 1e-2:
        raise ValueError("epsilon must lie in (1e-8, 1e-2)")
    x0 = np.array(getattr(batch, "tokens", batch), dtype=np.float64)

    def f(x):
        out = loss_fn(x)
        return float(getattr(out, "value", out))

    grad = np.zeros_like(x0)
    x = x0.copy()
    for idx in np.ndindex(x0.shape):
        orig = x[idx]
        x[idx] = orig + epsilon
        fp = f(x)
        x[idx] = orig - epsilon
        fm = f(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * epsilon)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Largest absolute deviation scaled by the larger gradient's max-norm."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / scale)
