"""Synthetic referring-expression scenes.

Each class gets a random base direction. Its attribute prototypes sit on a
cone around that base so that every pair of prototypes of the same class is
separated by the same angle ``theta``. Object tokens are a prototype plus
isotropic Gaussian noise of expected norm ``1/kappa``, renormalised; background
tokens are uniform on the sphere. Every object also gets a 2-D centroid.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import FORMAT_VERSION
from .embedding import ExpressionEmbedding, QueryKind, TokenBatch, TokenLabel, normalize_rows
from .errors import ConfigError, InfeasibleSpec, UnknownAxis

PLACEMENT_ATTEMPTS = 10_000
BACKGROUND = -1


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    count: int

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("attribute count must be non-negative")


@dataclass(frozen=True)
class ClassSpec:
    name: str
    attributes: tuple[AttributeSpec, ...]

    def __post_init__(self):
        attrs = tuple(
            a if isinstance(a, AttributeSpec) else AttributeSpec(**a) for a in self.attributes
        )
        if not attrs:
            raise ValueError(f"class {self.name!r} needs at least one attribute")
        object.__setattr__(self, "attributes", attrs)


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    dimension: int = 64
    classes: tuple[ClassSpec, ...] = (
        ClassSpec("object", (AttributeSpec("a", 10), AttributeSpec("b", 10))),
    )
    background: int = 20
    kappa: float = 2.5
    theta: float = 0.3
    scene_extent: float = 100.0
    min_spacing: float = 1.0
    query_noise: float = 0.0

    def __post_init__(self):
        classes = tuple(c if isinstance(c, ClassSpec) else ClassSpec(**c) for c in self.classes)
        object.__setattr__(self, "classes", classes)
        if not classes:
            raise ValueError("at least one class is required")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.background < 0:
            raise ValueError("background count must be non-negative")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0 < self.theta < math.pi:
            raise ValueError("theta must lie in (0, pi)")
        if not self.scene_extent > 0:
            raise ValueError("scene_extent must be positive")
        if self.min_spacing < 0 or self.query_noise < 0:
            raise ValueError("min_spacing and query_noise must be non-negative")

    @property
    def n_objects(self) -> int:
        return sum(a.count for c in self.classes for a in c.attributes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(**d)


@dataclass(frozen=True)
class Query:
    embedding: ExpressionEmbedding
    n: int
    class_name: str
    attribute_name: Optional[str] = None

    @property
    def label(self) -> str:
        if self.attribute_name is None:
            return self.class_name
        return f"{self.class_name}:{self.attribute_name}"


@dataclass(frozen=True, eq=False)
class Scenario:
    spec: ScenarioSpec
    batch: TokenBatch
    queries: tuple = field(default=())

    @property
    def expression_queries(self) -> list:
        return [q for q in self.queries if q.embedding.kind is QueryKind.MASKED_EXPRESSION]

    def class_query(self, class_id: int) -> Query:
        for q in self.queries:
            if q.embedding.kind is QueryKind.CLASS_ONLY and q.embedding.class_id == class_id:
                return q
        raise KeyError(class_id)

    def target_points(self, query: ExpressionEmbedding) -> np.ndarray:
        pts = [
            self.batch.points[i]
            for i, lab in enumerate(self.batch.labels)
            if query.refers_to(lab)
        ]
        return np.array(pts, dtype=np.float64).reshape(-1, 2)

    def with_tokens(self, tokens: np.ndarray) -> "Scenario":
        return Scenario(self.spec, self.batch.with_tokens(tokens), self.queries)


def _sphere_noise(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    # per-coordinate sd scale/sqrt(D): expected vector norm ~ scale in any D
    return rng.normal(0.0, scale / math.sqrt(shape[-1]), size=shape)


def attribute_prototypes(
    base: np.ndarray, k: int, theta: float, rng: np.random.Generator
) -> np.ndarray:
    """``k`` unit vectors on a cone around ``base`` with pairwise angle ``theta``.

    The offsets from the cone axis form a regular simplex, so the prototypes
    are equidistant. Needs ``cos(theta) >= -1/(k-1)`` and ``D >= k + 1``.
    """
    d = base.shape[0]
    if k == 1:
        return base[None, :].copy()
    cos2 = ((k - 1) * math.cos(theta) + 1.0) / k
    if cos2 < 0:
        raise InfeasibleSpec(f"{k} attributes cannot be pairwise {theta} rad apart")
    if d < k + 1:
        raise InfeasibleSpec(f"dimension {d} too small for {k} equidistant attributes")
    # orthonormal frame whose first column is the base direction
    m = np.column_stack([base, rng.normal(size=(d, k))])
    qmat, _ = np.linalg.qr(m)
    frame = qmat[:, 1 : k + 1].T
    simplex = frame - frame.mean(axis=0)
    simplex /= np.linalg.norm(simplex, axis=1, keepdims=True)
    cphi = math.sqrt(cos2)
    sphi = math.sqrt(max(0.0, 1.0 - cos2))
    return normalize_rows(cphi * base[None, :] + sphi * simplex)


def place_points(
    rng: np.random.Generator, count: int, extent: float, min_spacing: float
) -> np.ndarray:
    """Uniform points in ``[0, extent]^2`` at least ``min_spacing`` apart."""
    pts = np.empty((count, 2))
    placed = 0
    attempts = 0
    while placed < count:
        if attempts >= PLACEMENT_ATTEMPTS:
            raise InfeasibleSpec(
                f"placed only {placed}/{count} points with spacing {min_spacing} "
                f"in {PLACEMENT_ATTEMPTS} attempts"
            )
        attempts += 1
        cand = rng.uniform(0.0, extent, size=2)
        if placed and np.min(np.hypot(*(pts[:placed] - cand).T)) < min_spacing:
            continue
        pts[placed] = cand
        placed += 1
    return pts


def generate(spec: ScenarioSpec) -> Scenario:
    rng = np.random.default_rng(spec.seed)
    d = spec.dimension

    tokens, labels, queries = [], [], []
    for ci, cls in enumerate(spec.classes):
        base = normalize_rows(rng.normal(size=d))
        protos = attribute_prototypes(base, len(cls.attributes), spec.theta, rng)
        for ai, attr in enumerate(cls.attributes):
            noisy = protos[ai] + _sphere_noise(rng, (attr.count, d), 1.0 / spec.kappa)
            tokens.extend(normalize_rows(noisy))
            labels.extend([TokenLabel(ci, ai, True)] * attr.count)
            qv = protos[ai]
            if spec.query_noise > 0:
                qv = normalize_rows(qv + _sphere_noise(rng, (d,), spec.query_noise))
            queries.append(
                Query(
                    ExpressionEmbedding(qv, QueryKind.MASKED_EXPRESSION, ci, ai),
                    attr.count,
                    cls.name,
                    attr.name,
                )
            )
        n_class = sum(a.count for a in cls.attributes)
        queries.append(
            Query(ExpressionEmbedding(base, QueryKind.CLASS_ONLY, ci, None), n_class, cls.name)
        )

    if spec.background:
        tokens.extend(normalize_rows(rng.normal(size=(spec.background, d))))
        labels.extend([TokenLabel(BACKGROUND, BACKGROUND, False)] * spec.background)

    n_obj = spec.n_objects
    obj_points = place_points(rng, n_obj, spec.scene_extent, spec.min_spacing)
    points = [tuple(float(c) for c in p) for p in obj_points] + [None] * spec.background

    order = rng.permutation(len(tokens))
    batch = TokenBatch(
        np.array(tokens).reshape(len(tokens), d)[order],
        [labels[i] for i in order],
        f"scene-{spec.seed}",
        [points[i] for i in order],
    )
    return Scenario(spec, batch, tuple(queries))


SWEEP_AXES = {
    "theta": "theta",
    "kappa": "kappa",
    "background": "background",
    "targets_per_attribute": None,
}


def derive_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def sweep_specs(template: ScenarioSpec, axis: str, values: Sequence) -> list:
    if axis not in SWEEP_AXES:
        raise UnknownAxis(f"unknown sweep axis {axis!r}; choose from {sorted(SWEEP_AXES)}")
    specs = []
    for i, v in enumerate(values):
        seed = derive_seed(template.seed, i)
        if axis == "targets_per_attribute":
            classes = tuple(
                ClassSpec(c.name, tuple(AttributeSpec(a.name, int(v)) for a in c.attributes))
                for c in template.classes
            )
            specs.append(dataclasses.replace(template, seed=seed, classes=classes))
        else:
            value = int(v) if axis == "background" else float(v)
            specs.append(dataclasses.replace(template, seed=seed, **{SWEEP_AXES[axis]: value}))
    return specs


def sweep(template: ScenarioSpec, axis: str, values: Sequence) -> list:
    """One scenario per value of ``axis``; seeds derive from the template seed and index."""
    return [generate(s) for s in sweep_specs(template, axis, values)]


# -- serialization -------------------------------------------------------------


def scenario_to_dict(scenario: Scenario) -> dict:
    spec = scenario.spec
    b = scenario.batch
    classes = spec.classes
    tokens = []
    for vec, lab, pt in zip(b.tokens, b.labels, b.points):
        is_bg = lab.class_id == BACKGROUND
        tokens.append(
            {
                "values": [float(v) for v in vec],
                "class": None if is_bg else classes[lab.class_id].name,
                "attribute": None
                if is_bg
                else classes[lab.class_id].attributes[lab.attribute_id].name,
                "is_target": bool(lab.is_target),
                "point": None if pt is None else [float(pt[0]), float(pt[1])],
            }
        )
    queries = [
        {
            "class": q.class_name,
            "attribute": q.attribute_name,
            "kind": q.embedding.kind.value,
            "values": [float(v) for v in q.embedding.values],
            "n": int(q.n),
        }
        for q in scenario.queries
    ]
    return {
        "version": FORMAT_VERSION,
        "instance_id": b.instance_id,
        "spec": spec.to_dict(),
        "tokens": tokens,
        "queries": queries,
    }


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a JSON object")
    if doc.get("version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported scenario version {doc.get('version')!r}", "version")
    unknown = set(doc) - {"version", "instance_id", "spec", "tokens", "queries"}
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}")
    try:
        spec = ScenarioSpec.from_dict(doc["spec"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc), "spec") from exc
    class_ids = {c.name: i for i, c in enumerate(spec.classes)}
    attr_ids = {
        (c.name, a.name): j for c in spec.classes for j, a in enumerate(c.attributes)
    }

    vecs, labels, points = [], [], []
    for k, t in enumerate(doc.get("tokens", [])):
        where = f"tokens[{k}]"
        try:
            if t["class"] is None:
                lab = TokenLabel(BACKGROUND, BACKGROUND, bool(t["is_target"]))
            else:
                lab = TokenLabel(
                    class_ids[t["class"]],
                    attr_ids[(t["class"], t["attribute"])],
                    bool(t["is_target"]),
                )
            vecs.append([float(v) for v in t["values"]])
            labels.append(lab)
            pt = t.get("point")
            points.append(None if pt is None else (float(pt[0]), float(pt[1])))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"malformed token ({exc!r})", where) from exc

    queries = []
    for k, q in enumerate(doc.get("queries", [])):
        where = f"queries[{k}]"
        try:
            kind = QueryKind(q["kind"])
            ci = class_ids[q["class"]]
            ai = None if q.get("attribute") is None else attr_ids[(q["class"], q["attribute"])]
            emb = ExpressionEmbedding(np.array(q["values"], dtype=np.float64), kind, ci, ai)
            queries.append(Query(emb, int(q["n"]), q["class"], q.get("attribute")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed query ({exc!r})", where) from exc
    try:
        batch = TokenBatch(np.array(vecs, dtype=np.float64), labels, doc.get("instance_id", ""), points)
    except ValueError as exc:
        raise ConfigError(str(exc), "tokens") from exc
    for q in queries:
        if q.embedding.dim != batch.dim:
            raise ConfigError("query dimension differs from token dimension", "queries")
    return Scenario(spec, batch, tuple(queries))


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=1) + "\n")


def load_scenario(path) -> Scenario:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from exc
    return scenario_from_dict(doc)
