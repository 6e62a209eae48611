"""Acceptance gate: the workbench's core guarantees, checked end to end.

Every test prints one ``[acceptance] <name>: PASS|FAIL`` line so a plain
``pytest -s tests/test_acceptance.py`` doubles as a checklist.
"""

from __future__ import annotations

import functools
import itertools
import random
import time
from fractions import Fraction

import numpy as np
import pytest

from eds.annotation import (
    GroundTruth,
    chebyshev_budget,
    estimate_p,
    lower_bound_p,
    make_vote,
    read_vote_log,
    sample_annotation_pairs,
)
from eds.corpus import Corpus, EmbeddingModel, ScoreListModel, identity_ground_truth
from eds.discovery import PerModelSuspects, build_suspects_per_model, cost_report, union_dedupe
from eds.metrics import ModelRanks, auc_summary, build_eval_sets, evaluate_model, hr_at_k, mrr_at_k, roc_auc_query
from eds.robustness import loo_report
from eds.service import AnnotationService, VoteStore


def criterion(name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"[acceptance] {name}: FAIL", flush=True)
                raise
            print(f"[acceptance] {name}: PASS", flush=True)
        return wrapper
    return deco


# --- per-query ROC-AUC equals an independent double loop ---------------------

@criterion("roc-auc-oracle-equivalence")
def test_roc_auc_matches_brute_force_pair_counting():
    rng = np.random.default_rng(20260814)
    started = time.perf_counter()
    for _ in range(200):
        num_pos = int(rng.integers(1, 21))
        num_neg = int(rng.integers(1, 21))
        cands = [f"c{j:03d}" for j in range(num_pos + num_neg)]
        # Coarse integer scores force raw ties, exercising the id tie-break.
        table = {c: float(rng.integers(0, 8)) for c in cands}
        positives, negatives = cands[:num_pos], cands[num_pos:]
        corpus = Corpus(items=tuple(["q"] + cands), queries=("q",))
        ranks = ModelRanks(ScoreListModel("m", {"q": table}), corpus)
        labels = {("q", c): int(c in positives) for c in cands}
        (eval_set,) = build_eval_sets(ranks, labels)

        # Oracle: sort by (-score, id) from the raw table, then count every
        # (positive, negative) pair where the positive sits strictly higher.
        order = sorted(cands, key=lambda c: (-table[c], c))
        position = {c: i for i, c in enumerate(order)}
        wins = sum(
            1
            for p in positives
            for n in negatives
            if position[p] < position[n]
        )
        assert roc_auc_query(ranks, eval_set) == wins / (num_pos * num_neg)
    assert time.perf_counter() - started < 5.0


# --- prevalence estimator and sample-size budget -----------------------------

@criterion("prevalence-estimator-reproduction")
def test_prevalence_estimates_reproduce_reference_values():
    est = estimate_p(2, 2000, 0.00045)
    assert est.p_hat == 0.001
    assert chebyshev_budget(0.01, 0.05) == 2000
    ids = tuple(f"item{i:07d}" for i in range(52712))
    corpus = Corpus(items=ids, queries=ids[:2000])
    lb = lower_bound_p(45920, corpus)
    assert 0.00043 <= lb <= 0.00045


# --- review-workload arithmetic at benchmark scale ---------------------------

@criterion("eds-cost-arithmetic")
def test_cost_arithmetic_is_exact_at_benchmark_scale():
    ids = tuple(f"item{i:07d}" for i in range(52712))
    corpus = Corpus(items=ids, queries=ids[:2000])
    per_model = [
        PerModelSuspects(model=f"g{t}", k=6, entries=((ids[0], ids[100 + t], 0),))
        for t in range(6)
    ]
    report = cost_report(corpus, union_dedupe(per_model), p_hat=0.001)
    assert report.brute_force_ops == 2000 * 52711
    assert report.eds_upper_bound == 6 * 2000 * 6
    assert report.nominal_speedup == Fraction(52711, 36)
    assert round(float(report.nominal_speedup)) == 1464


# --- union-of-top-k pools concentrate positives ------------------------------

@criterion("synthetic-discovery-rate-gap")
def test_suspect_pool_beats_random_sampling_by_50x():
    started = time.perf_counter()
    rng = np.random.default_rng(5)
    items = tuple(f"d{j:04d}" for j in range(5000))
    corpus = Corpus(items=items, queries=items[:200])
    planted: dict[str, list[str]] = {}
    for q in corpus.queries:
        picks = rng.choice(len(items), size=6, replace=False)
        planted[q] = sorted(items[i] for i in picks if items[i] != q)[:5]
    positive_pairs = {(q, c) for q, ps in planted.items() for c in ps}
    p_true = len(positive_pairs) / corpus.pair_universe_size()
    assert 0.0009 < p_true < 0.0011

    scorers = []
    for j in range(3):
        table = {}
        for q in corpus.queries:
            keep = [p for i, p in enumerate(planted[q]) if i != (4 * j) % 5]
            fillers = rng.choice(len(items), size=6, replace=False)
            row = {p: 10.0 - i for i, p in enumerate(keep)}
            for i, f in enumerate(fillers):
                if items[f] != q:
                    row.setdefault(items[f], 5.0 - i)
            table[q] = row
        scorers.append(ScoreListModel(f"s{j}", table))
    per_model = [build_suspects_per_model(m, corpus, 6) for m in scorers]
    for pm in per_model:
        by_query: dict[str, int] = {}
        for q, c, _ in pm.entries:
            by_query[q] = by_query.get(q, 0) + (1 if (q, c) in positive_pairs else 0)
        # Each scorer surfaces at least 3 of the 5 planted positives per query.
        assert min(by_query.values()) >= 3
    suspects = union_dedupe(per_model)
    pool = suspects.pair_keys()
    p_k = sum(1 for pair in pool if pair in positive_pairs) / len(pool)

    draws = sample_annotation_pairs(corpus, 50_000, seed=11, exclude=pool)
    hits = sum(1 for pair in draws if pair in positive_pairs)
    random_rate_ub = max(hits, 1) / 50_000
    assert p_k >= 50 * random_rate_ub
    assert time.perf_counter() - started < 30.0


# --- which metrics move under per-query score recalibration ------------------

@criterion("metric-invariance-suite")
def test_macro_is_invariant_and_micro_is_not():
    rng = np.random.default_rng(77)
    transforms = [
        lambda x, a, b: a * x + b,
        lambda x, a, b: float(np.exp(x / 3.0)) + b,
        lambda x, a, b: x ** 3 + a,
    ]
    for _ in range(30):
        items = tuple(["q1", "q2"] + [f"c{j}" for j in range(12)])
        corpus = Corpus(items=items, queries=("q1", "q2"))
        labels = {}
        base: dict[str, dict[str, float]] = {}
        for q in corpus.queries:
            base[q] = {c: float(rng.normal()) for c in items[2:]}
            flags = [0, 1] + [int(rng.integers(0, 2)) for _ in items[4:]]
            rng.shuffle(flags)
            labels.update({(q, c): flags[i] for i, c in enumerate(items[2:])})
        warped = {}
        for q in corpus.queries:
            f = transforms[int(rng.integers(0, len(transforms)))]
            a, b = float(rng.uniform(0.5, 3.0)), float(rng.normal())
            warped[q] = {c: f(x, a, b) for c, x in base[q].items()}
        ranks_base = ModelRanks(ScoreListModel("base", base), corpus)
        ranks_warp = ModelRanks(ScoreListModel("warp", warped), corpus)
        assert auc_summary(ranks_base, labels)[1] == auc_summary(ranks_warp, labels)[1]

    # A per-query shift that drags one query's scores under the other's.
    corpus = Corpus(items=("q1", "q2", "a", "b", "c", "d"), queries=("q1", "q2"))
    labels = {("q1", "a"): 1, ("q1", "b"): 0, ("q2", "c"): 1, ("q2", "d"): 0}
    flat = ModelRanks(ScoreListModel("flat", {
        "q1": {"a": 4.0, "b": 3.0}, "q2": {"c": 3.8, "d": 2.9},
    }), corpus)
    shifted = ModelRanks(ScoreListModel("shifted", {
        "q1": {"a": 4.0, "b": 3.0}, "q2": {"c": 1.8, "d": 0.9},
    }), corpus)
    micro_flat, macro_flat = auc_summary(flat, labels)[:2]
    micro_shift, macro_shift = auc_summary(shifted, labels)[:2]
    assert macro_flat == macro_shift == 1.0
    assert micro_flat - micro_shift >= 0.01

    # Reciprocal rank never exceeds the hit indicator, and both grow with k.
    for _ in range(100):
        cands = [f"c{j}" for j in range(int(rng.integers(4, 16)))]
        corpus = Corpus(items=tuple(["q"] + cands), queries=("q",))
        table = {c: float(rng.normal()) for c in cands}
        labels = {("q", c): int(rng.integers(0, 2)) for c in cands}
        labels[("q", cands[0])] = 1
        ranks = ModelRanks(ScoreListModel("m", {"q": table}), corpus)
        hr = [hr_at_k(ranks, labels, k) for k in range(1, 11)]
        mrr = [mrr_at_k(ranks, labels, k) for k in range(1, 11)]
        for h, m in zip(hr, mrr):
            assert m <= h
        for seq in (hr, mrr):
            for lo, hi in zip(seq, seq[1:]):
                assert lo <= hi


# --- resolution rule over every possible vote pattern ------------------------

@criterion("majority-vote-truth-table")
def test_majority_vote_truth_table_is_exhaustive():
    for num_experts in (1, 2, 3, 4, 5):
        experts = tuple(f"e{i}" for i in range(num_experts))
        for pattern in itertools.product((0, 1), repeat=num_experts):
            gt = GroundTruth(experts=experts, valid_pairs=[("q", "c")])
            for expert, label in zip(experts, pattern):
                gt.record_vote(make_vote("q", "c", expert, label))
            expected = int(sum(pattern) > num_experts / 2)
            assert gt.resolve() == {("q", "c"): expected}


# --- ranking stability under generator exclusion -----------------------------

def _structured_pool(num_generators, demotions, num_items=60, num_queries=10, k=6, seed=0):
    rng = np.random.default_rng(seed)
    items = tuple(f"i{j:03d}" for j in range(num_items))
    corpus = Corpus(items=items, queries=items[:num_queries])
    planted = {
        q: sorted(rng.choice([i for i in items if i != q], size=4, replace=False).tolist())
        for q in corpus.queries
    }
    generators = []
    for g in range(num_generators):
        table = {}
        for q in corpus.queries:
            others = [i for i in items if i != q and i not in planted[q]]
            picked = rng.choice(others, size=k, replace=False)
            row = {p: 50.0 + float(rng.random()) for p in planted[q]}
            row.update({n: float(rng.random()) for n in picked})
            table[q] = row
        generators.append(ScoreListModel(f"g{g}", table))
    suspects = union_dedupe([build_suspects_per_model(g, corpus, k) for g in generators])
    labels = {(p.query, p.candidate): int(p.candidate in planted[p.query]) for p in suspects.pairs}
    evaluated = []
    for idx, t in enumerate(demotions):
        table = {}
        for q in corpus.queries:
            pos = planted[q]
            kept, demoted = pos[: len(pos) - t], pos[len(pos) - t:]
            middle = sorted(i for i in items if i != q and i not in pos)
            order = kept + middle + demoted
            table[q] = {cand: float(1000 - j) for j, cand in enumerate(order)}
        evaluated.append(ScoreListModel(f"m{idx}", table))
    return corpus, evaluated, suspects, labels


@criterion("loo-determinism-and-rank-agreement")
def test_designed_quality_order_survives_every_exclusion():
    corpus, models, suspects, labels = _structured_pool(4, (0, 1, 2, 3))
    report = loo_report(corpus, models, suspects, labels, p_method="exact")
    expected_order = ("m0", "m1", "m2", "m3")
    assert report.ranking("micro") == expected_order
    assert report.ranking("macro") == expected_order
    for excluded in ("g0", "g1", "g2", "g3"):
        assert report.ranking("micro", excluded) == expected_order
        assert report.ranking("macro", excluded) == expected_order
        for t, name in enumerate(expected_order):
            assert report.per_subset[excluded]["micro"][name] == 1.0 - t / 4.0
        for metric in ("micro", "macro"):
            agreement = report.rank_agreement[excluded][metric]
            assert agreement["sc"] == 1.0
            assert agreement["p_value"] == 1.0 / 24.0
            assert agreement["method"] == "exact"

    first = loo_report(corpus, models, suspects, labels, p_method="mc", seed=303)
    second = loo_report(corpus, models, suspects, labels, p_method="mc", seed=303)
    for excluded in ("g0", "g1", "g2", "g3"):
        p1 = first.rank_agreement[excluded]["micro"]["p_value"]
        p2 = second.rank_agreement[excluded]["micro"]["p_value"]
        assert round(p1, 4) == round(p2, 4)
        assert first.rank_agreement[excluded]["micro"]["method"] == "mc"


# --- durable vote log --------------------------------------------------------

@criterion("vote-log-replay")
def test_thousand_random_votes_replay_to_the_same_snapshot(tmp_path):
    items = tuple(f"v{j:02d}" for j in range(30))
    corpus = Corpus(items=items, queries=items[:12])
    table = {
        q: {c: float(j) for j, c in enumerate(items) if c != q}
        for q in corpus.queries
    }
    suspects = union_dedupe([build_suspects_per_model(ScoreListModel("g", table), corpus, 5)])
    experts = ("e1", "e2", "e3")
    log = tmp_path / "votes.jsonl"
    store = VoteStore(log, experts, valid_pairs=suspects.pair_keys())
    service = AnnotationService(corpus, suspects, store)
    assert len(service.pairs) == 60

    rng = random.Random(99)
    for _ in range(1000):
        service.submit_vote(
            rng.choice(experts), str(rng.randrange(len(service.pairs))), rng.randrange(2)
        )
    before = service.progress()
    store.close()

    assert len(read_vote_log(log)) == 1000
    revived_store = VoteStore(log, experts, valid_pairs=suspects.pair_keys())
    revived = AnnotationService(corpus, suspects, revived_store)
    after = revived.progress()
    assert after == before
    assert after.per_expert_done == before.per_expert_done
    assert after.running_p_k == before.running_p_k


# --- same-identity oracle scores perfectly on identity-derived labels --------

@criterion("identity-gt-sanity")
def test_identity_oracle_scores_perfect_hit_ratio():
    items = tuple(f"p{j:02d}" for j in range(40))
    corpus = Corpus(
        items=items,
        queries=items,
        id_labels={item: f"id{j // 2}" for j, item in enumerate(items)},
    )
    vectors = {}
    for j, item in enumerate(items):
        vec = [0.0] * 20
        vec[j // 2] = 1.0
        vectors[item] = vec
    oracle = EmbeddingModel("oracle", list(items), np.array([vectors[i] for i in items]))
    labels = identity_ground_truth(corpus).resolve()
    report = evaluate_model(ModelRanks(oracle, corpus), labels, ks=(1, 5))
    assert report.hr[1] == 1.0
    assert report.hr[5] == 1.0
    assert report.mrr[1] == 1.0
