import dataclasses
import json
import math

import numpy as np
import pytest

from crexlab.embedding import QueryKind
from crexlab.errors import ConfigError, InfeasibleSpec, UnknownAxis
from crexlab.selection import SelectionStrategy, select_positives, selection_accuracy
from crexlab.synthworld import (
    AttributeSpec,
    ClassSpec,
    ScenarioSpec,
    attribute_prototypes,
    derive_seed,
    generate,
    load_scenario,
    place_points,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    sweep,
    sweep_specs,
)


def small_spec(**kw):
    base = dict(
        seed=3,
        dimension=16,
        classes=(
            ClassSpec("cup", (AttributeSpec("red", 4), AttributeSpec("blue", 3))),
            ClassSpec("pen", (AttributeSpec("long", 2),)),
        ),
        background=5,
    )
    base.update(kw)
    return ScenarioSpec(**base)


def topn_accuracy(scenario, query):
    p = select_positives(scenario.batch, query.embedding, SelectionStrategy("topn", query.n))
    return selection_accuracy(p, scenario.batch)


def test_single_attribute_all_targets():
    spec = ScenarioSpec(classes=(ClassSpec("o", (AttributeSpec("a", 5),)),), background=0)
    s = generate(spec)
    assert len(s.batch) == 5
    assert all(lab.is_target for lab in s.batch.labels)
    assert s.expression_queries[0].n == 5


def test_deterministic():
    a, b = generate(small_spec()), generate(small_spec())
    np.testing.assert_array_equal(a.batch.tokens, b.batch.tokens)
    assert a.batch.labels == b.batch.labels and a.batch.points == b.batch.points
    for qa, qb in zip(a.queries, b.queries):
        np.testing.assert_array_equal(qa.embedding.values, qb.embedding.values)
    assert not np.array_equal(generate(small_spec(seed=4)).batch.tokens, a.batch.tokens)


def test_structure_and_labels():
    s = generate(small_spec())
    spec = s.spec
    assert len(s.batch) == spec.n_objects + spec.background
    np.testing.assert_allclose(np.linalg.norm(s.batch.tokens, axis=1), 1.0, atol=1e-12)
    for q in s.queries:
        assert q.embedding.dim == spec.dimension
        assert abs(np.linalg.norm(q.embedding.values) - 1.0) < 1e-12
    expr = s.expression_queries
    assert [q.label for q in expr] == ["cup:red", "cup:blue", "pen:long"]
    for q in expr:
        assert q.n == sum(q.embedding.refers_to(lab) for lab in s.batch.labels)
    assert sum(q.n for q in expr) == sum(lab.is_target for lab in s.batch.labels)
    assert s.class_query(0).n == 7
    assert s.class_query(1).embedding.kind is QueryKind.CLASS_ONLY
    # targets have points, background has none
    for lab, pt in zip(s.batch.labels, s.batch.points):
        assert (pt is None) == (not lab.is_target)


def test_points_in_extent_and_spaced():
    s = generate(small_spec(scene_extent=10.0, min_spacing=1.5))
    pts = np.array([p for p in s.batch.points if p is not None])
    assert np.all((pts >= 0) & (pts <= 10.0))
    d = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 1.5


def test_prototype_angles_equal_theta():
    rng = np.random.default_rng(0)
    base = np.zeros(12)
    base[0] = 1.0
    for k, theta in [(2, 0.3), (3, 1.0), (5, 0.7)]:
        p = attribute_prototypes(base, k, theta, rng)
        g = np.clip(p @ p.T, -1, 1)
        angles = np.arccos(g[np.triu_indices(k, 1)])
        np.testing.assert_allclose(angles, theta, atol=1e-7)
        np.testing.assert_allclose(np.linalg.norm(p, axis=1), 1.0, atol=1e-12)


def test_infeasible_specs():
    rng = np.random.default_rng(0)
    with pytest.raises(InfeasibleSpec):
        attribute_prototypes(np.eye(3)[0], 3, 3.0, rng)
    with pytest.raises(InfeasibleSpec):
        attribute_prototypes(np.eye(3)[0], 3, 0.5, rng)
    with pytest.raises(InfeasibleSpec):
        place_points(rng, 50, 2.0, 1.0)
    with pytest.raises(InfeasibleSpec):
        generate(small_spec(scene_extent=1.0, min_spacing=1.0))


def test_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(theta=0.0)
    with pytest.raises(ValueError):
        ScenarioSpec(kappa=-1.0)
    with pytest.raises(ValueError):
        ScenarioSpec(classes=())
    with pytest.raises(ValueError):
        ClassSpec("x", ())


def test_near_noiseless_orthogonal_attributes_select_exactly():
    for seed in range(100):
        spec = ScenarioSpec(seed=seed, dimension=32, kappa=1e6, theta=math.pi / 2)
        s = generate(spec)
        for q in s.expression_queries:
            assert topn_accuracy(s, q) == 1.0


def test_sweep_examples():
    template = small_spec()
    scenarios = sweep(template, "theta", [0.1, 0.5, 1.0])
    assert [s.spec.theta for s in scenarios] == [0.1, 0.5, 1.0]
    assert sweep(template, "theta", []) == []
    for i, s in enumerate(scenarios):
        assert s.spec.seed == derive_seed(template.seed, i)
        assert dataclasses.replace(s.spec, theta=template.theta, seed=template.seed) == template

    # separation between the two cup prototypes grows with theta
    seps = []
    for s in scenarios:
        a, b = (q.embedding.values for q in s.expression_queries[:2])
        seps.append(math.acos(min(1.0, float(a @ b))))
    assert seps == sorted(seps)


def test_sweep_other_axes():
    template = small_spec()
    (s,) = sweep_specs(template, "targets_per_attribute", [6])
    assert all(a.count == 6 for c in s.classes for a in c.attributes)
    (s,) = sweep_specs(template, "background", [11])
    assert s.background == 11 and isinstance(s.background, int)
    (s,) = sweep_specs(template, "kappa", [7])
    assert s.kappa == 7.0
    with pytest.raises(UnknownAxis):
        sweep(template, "colour", [1])


def test_json_round_trip_lossless(tmp_path):
    s = generate(small_spec(query_noise=0.1))
    path = tmp_path / "s.json"
    save_scenario(s, path)
    r = load_scenario(path)
    np.testing.assert_array_equal(r.batch.tokens, s.batch.tokens)
    assert r.batch.labels == s.batch.labels
    assert r.batch.points == s.batch.points
    assert r.batch.instance_id == s.batch.instance_id
    assert r.spec == s.spec
    assert [q.label for q in r.queries] == [q.label for q in s.queries]
    for a, b in zip(r.queries, s.queries):
        np.testing.assert_array_equal(a.embedding.values, b.embedding.values)
        assert (a.n, a.embedding.kind, a.embedding.class_id, a.embedding.attribute_id) == (
            b.n, b.embedding.kind, b.embedding.class_id, b.embedding.attribute_id,
        )
    assert scenario_to_dict(r) == scenario_to_dict(s)
    assert json.loads(path.read_text())["version"] == 1


def test_load_errors(tmp_path):
    doc = scenario_to_dict(generate(small_spec()))
    bad = dict(doc, version=9)
    with pytest.raises(ConfigError):
        scenario_from_dict(bad)
    bad = dict(doc, extra=1)
    with pytest.raises(ConfigError):
        scenario_from_dict(bad)
    bad = json.loads(json.dumps(doc))
    bad["tokens"][2]["class"] = "nope"
    with pytest.raises(ConfigError) as exc:
        scenario_from_dict(bad)
    assert "tokens[2]" in str(exc.value)
    path = tmp_path / "broken.json"
    path.write_text('{"version": 1,\n "spec": }')
    with pytest.raises(ConfigError) as exc:
        load_scenario(path)
    assert ":2:" in str(exc.value)
