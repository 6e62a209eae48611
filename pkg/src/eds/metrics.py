"""Ranking metrics over labeled (query, candidate) pairs.

The labeled pool is discovered per query, so per-query positive counts are
uneven.  Pooled (micro) metrics inherit that bias; per-query (macro)
metrics weight every evaluable query equally and are invariant to any
strictly increasing per-query rescaling of model scores.  Both are
reported side by side.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

from .corpus import Corpus, ItemId, ModelHandle, RankList, rank_candidates
from .errors import EvaluationError, ValidationError

Pair = tuple[ItemId, ItemId]

ANNOTATED = "annotated"

_NEG_INF = float("-inf")


class ModelRanks:
    """Cached full-depth rankings of one model over a corpus.

    Candidates a score-list model never scored have no rank; they order
    after every scored candidate, among themselves by ascending id.
    """

    def __init__(self, model: ModelHandle, corpus: Corpus) -> None:
        self.model = model
        self.corpus = corpus
        self._rankings: dict[ItemId, RankList] = {}
        self._rank_maps: dict[ItemId, dict[ItemId, int]] = {}
        self._score_maps: dict[ItemId, dict[ItemId, float]] = {}

    @property
    def name(self) -> str:
        return self.model.name

    def ranking(self, query: ItemId) -> RankList:
        if query not in self._rankings:
            depth = max(1, len(self.corpus.items))
            self._rankings[query] = rank_candidates(self.model, query, self.corpus, depth)
        return self._rankings[query]

    def rank_map(self, query: ItemId) -> dict[ItemId, int]:
        if query not in self._rank_maps:
            self._rank_maps[query] = {e.candidate: e.rank for e in self.ranking(query).entries}
        return self._rank_maps[query]

    def score_map(self, query: ItemId) -> dict[ItemId, float]:
        if query not in self._score_maps:
            self._score_maps[query] = {e.candidate: e.score for e in self.ranking(query).entries}
        return self._score_maps[query]

    def rank_of(self, query: ItemId, candidate: ItemId) -> int | None:
        return self.rank_map(query).get(candidate)

    def score_of(self, query: ItemId, candidate: ItemId) -> float:
        return self.score_map(query).get(candidate, _NEG_INF)

    def order_key(self, query: ItemId, candidate: ItemId) -> tuple:
        """Total order over candidates for one query, best first."""
        rank = self.rank_map(query).get(candidate)
        if rank is None:
            return (1, candidate)
        return (0, rank)


@dataclass(frozen=True)
class SampledNegativeConfig:
    """Negatives drawn from a rank window of model predictions instead of
    the annotated ones; breaks the tie between the negatives under test and
    the generators that proposed them."""

    count: int = 5
    seed: int = 0
    window_lo: int = 100
    window_hi: int = 500
    pool: str = "model"  # "model": the evaluated model's window; "generators": union of generator windows

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValidationError(f"count must be at least 1, got {self.count}")
        if not 0 <= self.window_lo < self.window_hi:
            raise ValidationError(f"window must satisfy 0 <= lo < hi, got [{self.window_lo}, {self.window_hi})")
        if self.pool not in ("model", "generators"):
            raise ValidationError(f"pool must be 'model' or 'generators', got {self.pool!r}")

    def describe(self) -> dict:
        return {"kind": "sampled", "count": self.count, "seed": self.seed,
                "window": [self.window_lo, self.window_hi], "pool": self.pool}


NegativeSource = Union[str, SampledNegativeConfig]


@dataclass(frozen=True)
class SampledNegatives:
    candidates: tuple[ItemId, ...]
    shortfall: bool


def sample_negatives(sources: Sequence[ModelRanks], labels: Mapping[Pair, int], query: ItemId,
                     window: tuple[int, int] = (100, 500), count: int = 5, seed: int = 0) -> SampledNegatives:
    """Draw presumed negatives for one query from the rank window of the
    given sources, skipping anything already labeled.

    Deterministic per (seed, query).  If the window holds fewer than
    ``count`` unlabeled candidates, all of them come back with the
    shortfall flag set.
    """
    lo, hi = window
    if not 0 <= lo < hi:
        raise ValidationError(f"window must satisfy 0 <= lo < hi, got [{lo}, {hi})")
    if count < 1:
        raise ValidationError(f"count must be at least 1, got {count}")
    if not sources:
        raise ValidationError("need at least one rank source")
    labeled = {c for (q, c) in labels if q == query}
    pool: set[ItemId] = set()
    for src in sources:
        for entry in src.ranking(query).entries[lo:hi]:
            if entry.candidate not in labeled:
                pool.add(entry.candidate)
    ordered = sorted(pool)
    rng = random.Random(f"{seed}:{query}")
    if len(ordered) <= count:
        return SampledNegatives(candidates=tuple(ordered), shortfall=len(ordered) < count)
    return SampledNegatives(candidates=tuple(sorted(rng.sample(ordered, count))), shortfall=False)


@dataclass(frozen=True)
class QueryEvalSet:
    """Positives and negatives for one query, plus where the negatives came from."""

    query: ItemId
    positives: tuple[ItemId, ...]
    negatives: tuple[ItemId, ...]
    negative_source: str  # "annotated" | "sampled"
    shortfall: bool = False

    @property
    def evaluable(self) -> bool:
        return bool(self.positives) and bool(self.negatives)


def split_labels_by_query(labels: Mapping[Pair, int]) -> dict[ItemId, tuple[list[ItemId], list[ItemId]]]:
    out: dict[ItemId, tuple[list[ItemId], list[ItemId]]] = {}
    for (q, c), lbl in labels.items():
        if lbl not in (0, 1):
            raise ValidationError(f"label for ({q!r}, {c!r}) must be 0 or 1, got {lbl!r}")
        pos, neg = out.setdefault(q, ([], []))
        (pos if lbl == 1 else neg).append(c)
    return out


def build_eval_sets(ranks: ModelRanks, labels: Mapping[Pair, int],
                    negative_source: NegativeSource = ANNOTATED,
                    generator_ranks: Sequence[ModelRanks] | None = None) -> list[QueryEvalSet]:
    """Assemble per-query evaluation sets.

    With annotated negatives every labeled query appears.  With sampled
    negatives, queries without positives are dropped (nothing to rank
    against) and annotated negatives are replaced by the sampled ones.
    """
    by_query = split_labels_by_query(labels)
    sets: list[QueryEvalSet] = []
    if negative_source == ANNOTATED:
        for q in sorted(by_query):
            pos, neg = by_query[q]
            sets.append(QueryEvalSet(query=q, positives=tuple(sorted(pos)),
                                     negatives=tuple(sorted(neg)), negative_source=ANNOTATED))
        return sets
    if not isinstance(negative_source, SampledNegativeConfig):
        raise ValidationError(f"negative_source must be {ANNOTATED!r} or a SampledNegativeConfig")
    cfg = negative_source
    if cfg.pool == "generators":
        if not generator_ranks:
            raise ValidationError("pool 'generators' needs generator_ranks")
        sources: Sequence[ModelRanks] = generator_ranks
    else:
        sources = (ranks,)
    for q in sorted(by_query):
        pos, _ = by_query[q]
        if not pos:
            continue
        drawn = sample_negatives(sources, labels, q, window=(cfg.window_lo, cfg.window_hi),
                                 count=cfg.count, seed=cfg.seed)
        sets.append(QueryEvalSet(query=q, positives=tuple(sorted(pos)), negatives=drawn.candidates,
                                 negative_source="sampled", shortfall=drawn.shortfall))
    return sets


# --- ROC-AUC ---------------------------------------------------------------

def _strict_win_count(keys_pos: list, keys_neg: list) -> int:
    """Number of (positive, negative) pairs where the positive orders first.

    Keys are unique within a query, so there are no ties to split.
    """
    merged = [(k, 1) for k in keys_pos] + [(k, 0) for k in keys_neg]
    merged.sort(key=lambda t: t[0])
    wins = 0
    pos_seen = 0
    for _, is_pos in merged:
        if is_pos:
            pos_seen += 1
        else:
            wins += pos_seen
    return wins


def roc_auc_query(ranks: ModelRanks, eval_set: QueryEvalSet) -> float:
    """Probability that a uniformly chosen positive of this query outranks a
    uniformly chosen negative.  Exact pair counting, no ties possible."""
    if not eval_set.evaluable:
        raise EvaluationError(f"query {eval_set.query!r} needs at least one positive and one negative")
    q = eval_set.query
    keys_pos = [ranks.order_key(q, c) for c in eval_set.positives]
    keys_neg = [ranks.order_key(q, c) for c in eval_set.negatives]
    wins = _strict_win_count(keys_pos, keys_neg)
    return wins / (len(keys_pos) * len(keys_neg))


def roc_auc_macro(ranks: ModelRanks, eval_sets: Sequence[QueryEvalSet]) -> tuple[float, int, int]:
    """Mean of per-query AUCs over evaluable queries.

    Returns (auc, queries_evaluated, queries_skipped).  Every evaluable
    query carries the same weight no matter how many pairs it holds.
    """
    evaluable = [es for es in eval_sets if es.evaluable]
    skipped = len(eval_sets) - len(evaluable)
    if not evaluable:
        raise EvaluationError("no query has both a positive and a negative")
    total = sum(roc_auc_query(ranks, es) for es in evaluable)
    return total / len(evaluable), len(evaluable), skipped


def roc_auc_micro(ranks: ModelRanks, eval_sets: Sequence[QueryEvalSet]) -> float:
    """AUC of all (score, label) pairs pooled across queries.

    Scores from different queries are compared directly, so per-query score
    recalibration moves this number.  Ties count half.
    """
    scored: list[tuple[float, int]] = []
    for es in eval_sets:
        q = es.query
        scored.extend((ranks.score_of(q, c), 1) for c in es.positives)
        scored.extend((ranks.score_of(q, c), 0) for c in es.negatives)
    num_pos = sum(lbl for _, lbl in scored)
    num_neg = len(scored) - num_pos
    if num_pos == 0 or num_neg == 0:
        raise EvaluationError("pooled scores hold a single class")
    scored.sort(key=lambda t: t[0])
    wins2 = 0  # doubled win count so ties stay integer
    pos_below = 0
    i = 0
    while i < len(scored):
        j = i
        while j < len(scored) and scored[j][0] == scored[i][0]:
            j += 1
        group_pos = sum(lbl for _, lbl in scored[i:j])
        group_neg = (j - i) - group_pos
        pos_above = num_pos - pos_below - group_pos
        wins2 += group_neg * (2 * pos_above + group_pos)
        pos_below += group_pos
        i = j
    return wins2 / (2 * num_pos * num_neg)


# --- precision-recall -------------------------------------------------------

def _average_precision(ordered_labels: Sequence[int]) -> float:
    num_pos = sum(ordered_labels)
    if num_pos == 0:
        raise EvaluationError("no positives in ranking")
    seen = 0
    total = 0.0
    for i, lbl in enumerate(ordered_labels):
        if lbl == 1:
            seen += 1
            total += seen / (i + 1)
    return total / num_pos


def pr_auc_query(ranks: ModelRanks, eval_set: QueryEvalSet) -> float:
    """Average precision of this query's labeled candidates in model order."""
    if not eval_set.evaluable:
        raise EvaluationError(f"query {eval_set.query!r} needs at least one positive and one negative")
    q = eval_set.query
    pool = [(ranks.order_key(q, c), 1) for c in eval_set.positives]
    pool += [(ranks.order_key(q, c), 0) for c in eval_set.negatives]
    pool.sort(key=lambda t: t[0])
    return _average_precision([lbl for _, lbl in pool])


def pr_auc_macro(ranks: ModelRanks, eval_sets: Sequence[QueryEvalSet]) -> tuple[float, int, int]:
    evaluable = [es for es in eval_sets if es.evaluable]
    skipped = len(eval_sets) - len(evaluable)
    if not evaluable:
        raise EvaluationError("no query has both a positive and a negative")
    total = sum(pr_auc_query(ranks, es) for es in evaluable)
    return total / len(evaluable), len(evaluable), skipped


def pr_auc_micro(ranks: ModelRanks, eval_sets: Sequence[QueryEvalSet]) -> float:
    """Average precision over the pooled candidates, ordered by raw score.

    Score ties across queries break by (query, candidate) id so the result
    is reproducible.
    """
    pool: list[tuple[float, ItemId, ItemId, int]] = []
    for es in eval_sets:
        q = es.query
        pool.extend((-ranks.score_of(q, c), q, c, 1) for c in es.positives)
        pool.extend((-ranks.score_of(q, c), q, c, 0) for c in es.negatives)
    num_pos = sum(lbl for *_, lbl in pool)
    if num_pos == 0 or num_pos == len(pool):
        raise EvaluationError("pooled scores hold a single class")
    pool.sort(key=lambda t: t[:3])
    return _average_precision([lbl for *_, lbl in pool])


# --- hit rate and reciprocal rank -------------------------------------------

def _positive_pairs(labels: Mapping[Pair, int]) -> list[Pair]:
    pairs = [pair for pair, lbl in labels.items() if lbl == 1]
    if not pairs:
        raise EvaluationError("no positive pairs")
    return sorted(pairs)


def hr_at_k(ranks: ModelRanks, labels: Mapping[Pair, int], k: int, per_query: bool = False) -> float:
    """Fraction of positive pairs the model ranks inside its top k.

    Averaged over pairs by default; ``per_query`` averages within each
    query first, then across queries, weighting queries equally.
    """
    if k < 1:
        raise ValidationError(f"k must be at least 1, got {k}")
    pairs = _positive_pairs(labels)
    hits = {pair: 1.0 if (r := ranks.rank_of(*pair)) is not None and r < k else 0.0 for pair in pairs}
    return _aggregate(hits, per_query)


def mrr_at_k(ranks: ModelRanks, labels: Mapping[Pair, int], k: int, per_query: bool = False) -> float:
    """Mean reciprocal rank of positive pairs, zero outside the top k.

    Each pair contributes 1 / (rank + 1), never more than its hit-rate
    indicator, so this is bounded above by the hit rate at the same k.
    """
    if k < 1:
        raise ValidationError(f"k must be at least 1, got {k}")
    pairs = _positive_pairs(labels)
    rr = {}
    for pair in pairs:
        r = ranks.rank_of(*pair)
        rr[pair] = 1.0 / (r + 1) if r is not None and r < k else 0.0
    return _aggregate(rr, per_query)


def _aggregate(per_pair: Mapping[Pair, float], per_query: bool) -> float:
    if not per_query:
        return sum(per_pair.values()) / len(per_pair)
    by_query: dict[ItemId, list[float]] = {}
    for (q, _), v in per_pair.items():
        by_query.setdefault(q, []).append(v)
    return sum(sum(vs) / len(vs) for vs in by_query.values()) / len(by_query)


# --- full evaluation ---------------------------------------------------------

@dataclass(frozen=True)
class MetricReport:
    """Every headline metric for one model on one labeled pool."""

    model: str
    ks: tuple[int, ...]
    hr: Mapping[int, float]
    mrr: Mapping[int, float]
    roc_auc_micro: float
    roc_auc_macro: float
    pr_auc_micro: float
    pr_auc_macro: float
    queries_evaluated: int
    queries_skipped: int
    num_positive_pairs: int
    num_negative_pairs: int
    negative_source: Mapping[str, object]
    hr_per_query: bool = False
    shortfall_queries: int = 0

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "ks": list(self.ks),
            "hr": {str(k): v for k, v in self.hr.items()},
            "mrr": {str(k): v for k, v in self.mrr.items()},
            "roc_auc_micro": self.roc_auc_micro,
            "roc_auc_macro": self.roc_auc_macro,
            "pr_auc_micro": self.pr_auc_micro,
            "pr_auc_macro": self.pr_auc_macro,
            "queries_evaluated": self.queries_evaluated,
            "queries_skipped": self.queries_skipped,
            "num_positive_pairs": self.num_positive_pairs,
            "num_negative_pairs": self.num_negative_pairs,
            "negative_source": dict(self.negative_source),
            "hr_per_query": self.hr_per_query,
            "shortfall_queries": self.shortfall_queries,
        }


def evaluate_model(ranks: ModelRanks, labels: Mapping[Pair, int], ks: Sequence[int] = (5, 9),
                   negative_source: NegativeSource = ANNOTATED, *,
                   hr_per_query: bool = False,
                   generator_ranks: Sequence[ModelRanks] | None = None) -> MetricReport:
    """Run the full metric suite for one model.

    HR and MRR always use the annotated positive pairs; the AUC family uses
    negatives from ``negative_source``.
    """
    if not ks:
        raise ValidationError("need at least one k")
    ks = tuple(sorted(set(int(k) for k in ks)))
    if ks[0] < 1:
        raise ValidationError(f"every k must be at least 1, got {ks[0]}")
    if not labels:
        raise EvaluationError("no labeled pairs")
    eval_sets = build_eval_sets(ranks, labels, negative_source, generator_ranks)
    hr = {k: hr_at_k(ranks, labels, k, per_query=hr_per_query) for k in ks}
    mrr = {k: mrr_at_k(ranks, labels, k, per_query=hr_per_query) for k in ks}
    macro, evaluated, skipped = roc_auc_macro(ranks, eval_sets)
    micro = roc_auc_micro(ranks, eval_sets)
    pr_macro, _, _ = pr_auc_macro(ranks, eval_sets)
    pr_micro = pr_auc_micro(ranks, eval_sets)
    num_pos = sum(len(es.positives) for es in eval_sets)
    num_neg = sum(len(es.negatives) for es in eval_sets)
    if negative_source == ANNOTATED:
        descriptor: dict[str, object] = {"kind": "annotated"}
    else:
        descriptor = negative_source.describe()
    return MetricReport(
        model=ranks.name,
        ks=ks,
        hr=hr,
        mrr=mrr,
        roc_auc_micro=micro,
        roc_auc_macro=macro,
        pr_auc_micro=pr_micro,
        pr_auc_macro=pr_macro,
        queries_evaluated=evaluated,
        queries_skipped=skipped,
        num_positive_pairs=num_pos,
        num_negative_pairs=num_neg,
        negative_source=descriptor,
        hr_per_query=hr_per_query,
        shortfall_queries=sum(1 for es in eval_sets if es.shortfall),
    )


def auc_summary(ranks: ModelRanks, labels: Mapping[Pair, int]) -> tuple[float, float, int, int]:
    """(micro, macro, evaluated, skipped) with annotated negatives; the
    light-weight core the robustness sweep loops over."""
    eval_sets = build_eval_sets(ranks, labels, ANNOTATED)
    macro, evaluated, skipped = roc_auc_macro(ranks, eval_sets)
    micro = roc_auc_micro(ranks, eval_sets)
    return micro, macro, evaluated, skipped
