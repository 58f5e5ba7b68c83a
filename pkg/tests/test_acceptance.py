"""Acceptance criteria, one test each.

Every test prints a single ``[PASS]``/``[FAIL]`` line with the measured
quantities, then asserts. Run with ``pytest tests/test_acceptance.py -s`` to
see the lines, or ``python tests/test_acceptance.py`` for a plain summary.
"""

import dataclasses
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from crexlab.cli import run_command  # noqa: E402
from crexlab.detection import ThresholdConfig, detect  # noqa: E402
from crexlab.embedding import ExpressionEmbedding, QueryKind, TokenBatch  # noqa: E402
from crexlab.experiments import DEFAULT_STRATEGIES  # noqa: E402
from crexlab.losses import (  # noqa: E402
    LossConfig,
    cls_loss,
    composite_loss,
    finite_difference_gradient,
    loc_loss,
    max_relative_error,
    modified_sup_con_loss,
    sup_con_loss,
)
from crexlab.metrics import CountPair, PointMatchResult, f1, mae, match_points, rmse  # noqa: E402
from crexlab.selection import (  # noqa: E402
    PartitionedBatch,
    SelectionStrategy,
    select_positives,
    selection_accuracy,
)
from crexlab.synthworld import ScenarioSpec, generate  # noqa: E402
from crexlab.trainer import TrainConfig, _Problem, compare_losses, train  # noqa: E402

EPS = 1e-5
CONTRASTIVE_ONLY = LossConfig(lambda_loc=0.0, lambda_cls=0.0, lambda_c=1.0)
OVERLAP_SEEDS = range(20)


def report(number, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}", flush=True)
    assert ok, detail


def random_sets(rng, n):
    sets = []
    for i in range(n):
        others = [j for j in range(n) if j != i]
        k = int(rng.integers(0, len(others) + 1))
        sets.append(tuple(sorted(rng.choice(others, size=k, replace=False).tolist())))
    return sets


def partition_of(n, positives, d):
    pos = tuple(sorted(int(p) for p in positives))
    neg = tuple(i for i in range(n) if i not in pos)
    return PartitionedBatch(pos, neg, np.zeros(n), ExpressionEmbedding(np.ones(d)))


def away_from_zero(rng, shape, gap=1e-3):
    v = rng.normal(size=shape)
    return np.where(np.abs(v) < gap, np.sign(v + 1e-300) * gap * 2, v)


# -- 1 -------------------------------------------------------------------------


def test_gradient_correctness():
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = {}

    def track(name, analytic, numeric):
        worst[name] = max(worst.get(name, 0.0), max_relative_error(analytic, numeric))

    for _ in range(100):
        n, d = int(rng.integers(2, 9)), int(rng.integers(2, 7))
        x = rng.normal(size=(n, d))
        cfg = LossConfig(temperature=float(rng.uniform(0.07, 1.0)))
        sets = random_sets(rng, n)
        r = sup_con_loss(TokenBatch(x), sets, cfg)
        track("sup_con", r.gradients, finite_difference_gradient(lambda y: sup_con_loss(TokenBatch(y), sets, cfg), x, EPS))

        part = partition_of(n, rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False), d)
        r = modified_sup_con_loss(part, TokenBatch(x), cfg)
        track("modified", r.gradients, finite_difference_gradient(lambda y: modified_sup_con_loss(part, TokenBatch(y), cfg), x, EPS))

        m = int(rng.integers(1, 7))
        tgt = rng.uniform(0, 10, size=(m, 2))
        pred = tgt + away_from_zero(rng, (m, 2))
        pairs = [(i, i) for i in range(m)]
        r = loc_loss(pred, tgt, pairs)
        track("loc", r.grads["points"], finite_difference_gradient(lambda p: loc_loss(p, tgt, pairs).value, pred, EPS))

        logits = rng.normal(scale=3.0, size=(n, 2))
        labels = rng.integers(0, 2, size=n)
        r = cls_loss(logits, labels)
        track("cls", r.grads["logits"], finite_difference_gradient(lambda q: cls_loss(q, labels).value, logits, EPS))

        w = LossConfig(cfg.temperature, *rng.uniform(0, 5, size=3))

        def total(xx, ll, pp):
            return composite_loss(
                loc_loss(pp, tgt, pairs), cls_loss(ll, labels), sup_con_loss(TokenBatch(xx), sets, w), w
            )

        r = total(x, logits, pred)
        track("composite", r.grads["embeddings"], finite_difference_gradient(lambda y: total(y, logits, pred).value, x, EPS))
        track("composite", r.grads["logits"], finite_difference_gradient(lambda y: total(x, y, pred).value, logits, EPS))
        track("composite", r.grads["points"], finite_difference_gradient(lambda y: total(x, logits, y).value, pred, EPS))

    # the trainer's full objective, including the cls head chained through normalisation
    for seed in range(100):
        s = generate(ScenarioSpec(seed=seed, dimension=6, background=4,
                                  classes=({"name": "o", "attributes": [{"name": "a", "count": 3}, {"name": "b", "count": 3}]},)))
        q = s.expression_queries[seed % 2]
        kind = "modified" if seed % 2 else "standard"
        tc = TrainConfig(contrastive=kind, loss=LossConfig(temperature=float(rng.uniform(0.1, 1.0))))
        prob = _Problem(s, q.embedding, q.n, tc)
        h = s.batch.tokens * rng.uniform(0.5, 2.0, size=(len(s.batch), 1))
        offsets = away_from_zero(rng, prob.target_points.shape)
        part = select_positives(s.batch, q.embedding, SelectionStrategy("topn-sqrt", q.n))
        r = prob.objective(h, offsets, part)
        track("composite", r.grads["embeddings"], finite_difference_gradient(lambda y: prob.objective(y, offsets, part).value, h, EPS))
        track("composite", r.grads["points"], finite_difference_gradient(lambda y: prob.objective(h, y, part).value, offsets, EPS))

    elapsed = time.perf_counter() - start
    ok = all(v < 1e-5 for v in worst.values()) and len(worst) == 5 and elapsed < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(1, ok, f"max relative error {detail} (limit 1e-5); {elapsed:.1f}s (limit 30s)")


# -- 2 -------------------------------------------------------------------------


def test_oracle_equivalence():
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        n, d = int(rng.integers(2, 21)), int(rng.integers(1, 9))
        x = rng.normal(size=(n, d))
        tau = float(rng.uniform(0.05, 1.0))
        cfg = LossConfig(temperature=tau)
        sets = random_sets(rng, n)
        got = sup_con_loss(TokenBatch(x), sets, cfg).value
        worst = max(worst, abs(got - oracles.supcon(x.tolist(), sets, tau)))
        pos = rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False).tolist()
        got = modified_sup_con_loss(partition_of(n, pos, d), TokenBatch(x), cfg).value
        worst = max(worst, abs(got - oracles.modified_supcon(x.tolist(), pos, tau)))
    elapsed = time.perf_counter() - start
    report(2, worst <= 1e-9 and elapsed < 10,
           f"max |loss - oracle| {worst:.1e} over 500 batches (limit 1e-9); {elapsed:.1f}s (limit 10s)")


# -- 3 -------------------------------------------------------------------------


def test_reduction_identity():
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(200):
        n, d = int(rng.integers(2, 21)), int(rng.integers(1, 9))
        x = rng.normal(size=(n, d))
        cfg = LossConfig(temperature=float(rng.uniform(0.05, 1.0)))
        full = [tuple(j for j in range(n) if j != i) for i in range(n)]
        a = modified_sup_con_loss(partition_of(n, range(n), d), TokenBatch(x), cfg).value
        b = sup_con_loss(TokenBatch(x), full, cfg).value
        worst = max(worst, abs(a - b))
    report(3, worst <= 1e-12, f"max |modified - standard| with empty I- {worst:.1e} over 200 batches (limit 1e-12)")


# -- 4 -------------------------------------------------------------------------


def test_non_negativity_and_anchor_restriction():
    rng = np.random.default_rng(404)
    negatives = restriction = 0
    for _ in range(1000):
        n, d = int(rng.integers(2, 13)), int(rng.integers(1, 9))
        x = rng.normal(size=(n, d))
        tau = float(rng.uniform(0.02, 2.0))
        cfg = LossConfig(temperature=tau)
        s = sup_con_loss(TokenBatch(x), random_sets(rng, n), cfg)
        pos = sorted(rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False).tolist())
        m = modified_sup_con_loss(partition_of(n, pos, d), TokenBatch(x), cfg)
        negatives += s.value < 0 or m.value < 0 or np.any(s.terms < 0) or np.any(m.terms < 0)

        # term by term against the standard loss restricted to I+ anchors, P(i) = I+ \ {i}
        sets = [tuple(p for p in pos if p != i) if i in pos else () for i in range(n)]
        ref = oracles.supcon_terms(x.tolist(), sets, tau) if len(pos) > 1 else [0.0] * n
        outside = [m.terms[i] for i in range(n) if i not in pos]
        bad = any(t != 0.0 for t in outside) or not np.allclose(m.terms, ref, rtol=0, atol=1e-9)
        bad = bad or abs(m.value - sum(ref[i] for i in pos)) > 1e-9
        restriction += bool(bad)
    report(4, negatives == 0 and restriction == 0,
           f"{negatives} negative values, {restriction} anchor-restriction counterexamples over 1000 batches")


# -- 5, 6 ----------------------------------------------------------------------


def overlap_scenario(seed):
    return generate(ScenarioSpec(seed=seed, theta=0.3, background=20))


def test_loss_ablation_direction():
    start = time.perf_counter()
    wins = 0
    std_neg, mod_neg = [], []
    for seed in OVERLAP_SEEDS:
        s = overlap_scenario(seed)
        std, mod = compare_losses(s, s.expression_queries[0], TrainConfig(loss=CONTRASTIVE_ONLY, seed=seed))
        std_neg.append(std.final.intra_negative)
        mod_neg.append(mod.final.intra_negative)
        wins += (
            mod.final.intra_negative < std.final.intra_negative
            and mod.final.selection_accuracy >= std.final.selection_accuracy
        )
    elapsed = time.perf_counter() - start
    report(5, wins >= 16 and elapsed < 120,
           f"modified loss wins {wins}/20 seeds (need 16); mean intra-negative cosine "
           f"{np.mean(mod_neg):.3f} vs {np.mean(std_neg):.3f}; {elapsed:.1f}s (limit 120s)")


def test_selection_ablation_direction():
    names = [s.label for s in DEFAULT_STRATEGIES]
    f1s = {n: [] for n in names}
    own = {n: [] for n in names}
    for seed in OVERLAP_SEEDS:
        s = overlap_scenario(seed)
        q = s.expression_queries[0]
        for strat in DEFAULT_STRATEGIES:
            t = train(s, q, TrainConfig(loss=CONTRASTIVE_ONLY, seed=seed, selection=strat))
            f1s[strat.label].append(t.final.topn_f1)
            own[strat.label].append(t.final.selection_f1)
    mean = {n: float(np.mean(v)) for n, v in f1s.items()}
    order = ["topn", "topn-2log", "topn-sqrt", "top5"]
    gaps = [mean[b] - mean[a] for a, b in zip(order, order[1:])]
    ok = all(g <= 0.02 for g in gaps)
    ranking = " >= ".join(f"{n} {mean[n]:.3f}" for n in order)
    informational = ", ".join(f"{n} {np.mean(own[n]):.3f}" for n in order)
    report(6, ok, f"mean exact-N F1 {ranking}; worst violation {max(gaps):+.3f} (limit 0.02); "
                  f"own-set F1 for reference: {informational}")


# -- 7 -------------------------------------------------------------------------


def mean_topn_accuracy(spec_kwargs, seeds=range(100)):
    accs = []
    for seed in seeds:
        s = generate(ScenarioSpec(seed=seed, **spec_kwargs))
        for q in s.expression_queries:
            p = select_positives(s.batch, q.embedding, SelectionStrategy("topn", q.n))
            accs.append(selection_accuracy(p, s.batch))
    return float(np.mean(accs))


def test_selection_accuracy_regimes():
    clean = mean_topn_accuracy(dict(kappa=1e3, theta=1.2))
    contaminated = mean_topn_accuracy(dict(theta=0.25, query_noise=0.05))
    ok = clean >= 0.99 and 0.5 < contaminated < 0.95
    report(7, ok, f"well-separated accuracy {clean:.3f} (need >= 0.99); "
                  f"contaminated accuracy {contaminated:.3f} (need in (0.5, 0.95))")


# -- 8 -------------------------------------------------------------------------


def test_metrics_correctness():
    rng = np.random.default_rng(808)
    jensen = 0
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        pairs = [CountPair(int(g), int(p)) for g, p in rng.integers(0, 300, size=(n, 2))]
        jensen += mae(pairs) > rmse(pairs) + 1e-12
    mismatches = 0
    for _ in range(200):
        pred = rng.integers(0, 6, size=(int(rng.integers(0, 8)), 2)).astype(float).tolist()
        gt = rng.integers(0, 6, size=(int(rng.integers(0, 8)), 2)).astype(float).tolist()
        delta = float(rng.uniform(0.5, 3.0))
        m = match_points(pred, gt, delta)
        count, cost, _ = oracles.exhaustive_match(pred, gt, delta)
        mismatches += m.tp != count or abs(sum(d for _, _, d in m.matched) - cost) > 1e-9
    examples = (
        f1(PointMatchResult(((0, 0, 0.0), (1, 1, 0.0)))) == (1.0, 1.0, 1.0)
        and f1(PointMatchResult(tuple((i, i, 0.0) for i in range(3)), (3,), (3, 4, 5)))[:2] == (0.75, 0.5)
        and abs(f1(PointMatchResult(tuple((i, i, 0.0) for i in range(3)), (3,), (3, 4, 5)))[2] - 0.6) < 1e-15
        and f1(PointMatchResult((), (), (0, 1))) == (0.0, 0.0, 0.0)
    )
    ok = jensen == 0 and mismatches == 0 and examples
    report(8, ok, f"{jensen} mae>rmse cases in 1000, {mismatches} matching mismatches vs exhaustive oracle "
                  f"in 200, F1 examples {'exact' if examples else 'wrong'}")


# -- 9 -------------------------------------------------------------------------


def constructed_case(rng):
    """Tokens with prescribed mapped scores against two orthogonal queries."""
    n = int(rng.integers(3, 15))
    rows, expected = [], []
    for i in range(n):
        while True:
            m_e, m_c = rng.uniform(0.0, 1.0, size=2)
            a, b = 2 * m_e - 1, 2 * m_c - 1
            if a * a + b * b <= 1 and min(abs(m_e - 0.36), abs(m_c - 0.30)) > 1e-6:
                break
        rows.append([a, b, math.sqrt(1 - a * a - b * b), 0.0])
        if m_c >= 0.30 and m_e >= 0.36:
            expected.append(i)
    q = ExpressionEmbedding([1.0, 0.0, 0.0, 0.0])
    cq = ExpressionEmbedding([0.0, 1.0, 0.0, 0.0], QueryKind.CLASS_ONLY)
    return TokenBatch(np.array(rows)), q, cq, expected


def test_thresholding():
    rng = np.random.default_rng(909)
    violations = 0
    levels = np.linspace(0.0, 1.0, 11)
    for seed in range(200):
        s = generate(ScenarioSpec(seed=seed, dimension=16, theta=float(rng.uniform(0.2, 1.5)), background=10))
        q = s.expression_queries[seed % 2]
        cq = s.class_query(q.embedding.class_id).embedding
        fixed = float(rng.uniform(0.0, 1.0))
        by_cls = [detect(s.batch, q.embedding, cq, ThresholdConfig(c, fixed))[1] for c in levels]
        by_tok = [detect(s.batch, q.embedding, cq, ThresholdConfig(fixed, t))[1] for t in levels]
        violations += any(b > a for a, b in zip(by_cls, by_cls[1:]))
        violations += any(b > a for a, b in zip(by_tok, by_tok[1:]))
        violations += max(by_cls + by_tok) > len(s.batch)
    wrong = 0
    for _ in range(20):
        batch, q, cq, expected = constructed_case(rng)
        idx, count = detect(batch, q, cq, ThresholdConfig())
        wrong += idx != expected or count != len(expected)
    report(9, violations == 0 and wrong == 0,
           f"{violations} monotonicity/bound violations over 200 scenarios, "
           f"{wrong}/20 constructed cases disagree with the enumerated pass set")


# -- 10 ------------------------------------------------------------------------


def test_sweep_determinism(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": {"seed": 11, "dimension": 32}, "train": {"steps": 40}}))
    outputs = []
    for run in ("first", "second"):
        out = tmp_path / run
        code = run_command(["sweep", "--config", str(cfg), "--axis", "theta", "--values", "0.3,0.6,1.2",
                            "--out-dir", str(out), "--no-timestamp", "--no-figures"])
        assert code == 0
        outputs.append((out / "sweep.csv").read_bytes())
    same = outputs[0] == outputs[1]
    report(10, same, f"sweep CSVs {'byte-identical' if same else 'differ'} ({len(outputs[0])} bytes)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-s", "-q", "-p", "no:cacheprovider"]))
