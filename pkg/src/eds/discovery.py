"""Ensemble candidate discovery.

Each similarity model nominates its top-k candidates per query.  The union
of those nominations, deduplicated across models with provenance kept, is
the suspect set that goes to annotation.  Reviewing only suspects instead
of the full query-by-item cross product is what makes exhaustive labeling
affordable; the cost report quantifies that saving.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np

from .corpus import Corpus, ItemId, ModelHandle, rank_candidates
from .errors import CorpusFormatError, ValidationError

Pair = tuple[ItemId, ItemId]


@dataclass(frozen=True)
class Proposal:
    """One model's nomination of a pair, with the rank it assigned."""

    model: str
    rank: int


@dataclass(frozen=True)
class SuspectPair:
    query: ItemId
    candidate: ItemId
    proposers: tuple[Proposal, ...]


@dataclass(frozen=True)
class PerModelSuspects:
    """Top-k nominations of a single model: (query, candidate, rank) triples."""

    model: str
    k: int
    entries: tuple[tuple[ItemId, ItemId, int], ...]


@dataclass(frozen=True)
class SuspectSet:
    """Deduplicated union of per-model nominations with provenance."""

    k: int
    models: tuple[str, ...]
    pairs: tuple[SuspectPair, ...]
    num_queries: int
    per_model_sets: Mapping[str, frozenset]

    def pair_keys(self) -> frozenset:
        return frozenset((p.query, p.candidate) for p in self.pairs)

    def proposer_map(self) -> dict[Pair, tuple[str, ...]]:
        return {(p.query, p.candidate): tuple(pr.model for pr in p.proposers) for p in self.pairs}


def build_suspects_per_model(model: ModelHandle, corpus: Corpus, k: int) -> PerModelSuspects:
    """Collect one model's top-k candidates for every corpus query."""
    if k < 1:
        raise ValidationError(f"k must be at least 1, got {k}")
    if not corpus.queries:
        raise ValidationError("corpus has no queries")
    entries: list[tuple[ItemId, ItemId, int]] = []
    for q in corpus.queries:
        ranking = rank_candidates(model, q, corpus, k)
        entries.extend((q, e.candidate, e.rank) for e in ranking.entries)
    return PerModelSuspects(model=model.name, k=k, entries=tuple(entries))


def union_dedupe(per_model: Sequence[PerModelSuspects]) -> SuspectSet:
    """Merge per-model nominations into one deduplicated suspect set."""
    if not per_model:
        raise ValidationError("need at least one per-model suspect list")
    ks = {pm.k for pm in per_model}
    if len(ks) != 1:
        raise ValidationError(f"mismatched k across suspect lists: {sorted(ks)}")
    names = [pm.model for pm in per_model]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate model names in suspect lists")
    k = ks.pop()
    merged: dict[Pair, dict[str, int]] = {}
    per_model_sets: dict[str, frozenset] = {}
    for pm in per_model:
        pairs = set()
        for q, c, r in pm.entries:
            if not 0 <= r < k:
                raise ValidationError(f"model {pm.model!r} proposed rank {r} outside [0, {k})")
            pairs.add((q, c))
            merged.setdefault((q, c), {})[pm.model] = r
        per_model_sets[pm.model] = frozenset(pairs)
    suspect_pairs = tuple(
        SuspectPair(
            query=q,
            candidate=c,
            proposers=tuple(Proposal(model=m, rank=r) for m, r in sorted(merged[(q, c)].items())),
        )
        for q, c in sorted(merged)
    )
    return SuspectSet(
        k=k,
        models=tuple(sorted(set(names))),
        pairs=suspect_pairs,
        num_queries=len({q for q, _ in merged}),
        per_model_sets=per_model_sets,
    )


def overlap_matrix(s: SuspectSet) -> np.ndarray:
    """Pairwise agreement between models, in percent.

    Cell (i, j) is |top-k(i) ∩ top-k(j)| divided by the nominal per-model
    budget (num_queries * k), times 100.  The diagonal is NaN: self-overlap
    carries no information.
    """
    if len(s.models) < 2:
        raise ValidationError("overlap needs at least two models")
    denom = s.num_queries * s.k
    if denom == 0:
        raise ValidationError("suspect set is empty")
    n = len(s.models)
    out = np.full((n, n), np.nan)
    for i, mi in enumerate(s.models):
        for j, mj in enumerate(s.models):
            if i == j:
                continue
            inter = len(s.per_model_sets[mi] & s.per_model_sets[mj])
            out[i, j] = 100.0 * inter / denom
    return out


@dataclass(frozen=True)
class DuplicationStats:
    """How much of the ensemble's nomination budget is spent re-proposing
    pairs another model already found."""

    avg_candidates_per_query: float
    max_candidates_per_query: int
    per_query_cap: int
    duplication_rate: float


def duplication_stats(s: SuspectSet) -> DuplicationStats:
    if not s.pairs:
        raise ValidationError("suspect set is empty")
    per_query: dict[ItemId, int] = {}
    for p in s.pairs:
        per_query[p.query] = per_query.get(p.query, 0) + 1
    counts = list(per_query.values())
    avg = sum(counts) / len(counts)
    # The cap is the most nominations any single model actually produced for
    # one query; with full-depth pools this equals k.
    cap = 0
    for pairs in s.per_model_sets.values():
        by_q: dict[ItemId, int] = {}
        for q, _ in pairs:
            by_q[q] = by_q.get(q, 0) + 1
        if by_q:
            cap = max(cap, max(by_q.values()))
    rate = 1.0 - avg / (len(s.models) * cap)
    return DuplicationStats(
        avg_candidates_per_query=avg,
        max_candidates_per_query=max(counts),
        per_query_cap=cap,
        duplication_rate=rate,
    )


@dataclass(frozen=True)
class CostReport:
    """Annotation workload of ensemble discovery versus the alternatives."""

    brute_force_ops: int
    eds_ops: int
    eds_upper_bound: int
    speedup: float
    nominal_speedup: Fraction
    random_expected_trials_per_positive: float

    def to_dict(self) -> dict:
        return {
            "brute_force_ops": self.brute_force_ops,
            "eds_ops": self.eds_ops,
            "eds_upper_bound": self.eds_upper_bound,
            "speedup": self.speedup,
            "nominal_speedup": float(self.nominal_speedup),
            "nominal_speedup_exact": [self.nominal_speedup.numerator, self.nominal_speedup.denominator],
            "random_expected_trials_per_positive": self.random_expected_trials_per_positive,
        }


def cost_report(corpus: Corpus, s: SuspectSet, p_hat: float) -> CostReport:
    """Compare annotation workloads.

    brute force reviews every (query, candidate) pair; the ensemble reviews
    only the suspect set, bounded above by |models| * |queries| * k; random
    sampling needs on average 1 / p_hat draws per positive found.
    """
    if not 0.0 < p_hat <= 1.0:
        raise ValidationError(f"p_hat must be in (0, 1], got {p_hat}")
    brute = corpus.pair_universe_size()
    if brute == 0:
        raise ValidationError("corpus has no (query, candidate) pairs")
    eds_ops = len(s.pairs)
    if eds_ops == 0:
        raise ValidationError("suspect set is empty")
    upper = len(s.models) * len(corpus.queries) * s.k
    return CostReport(
        brute_force_ops=brute,
        eds_ops=eds_ops,
        eds_upper_bound=upper,
        speedup=brute / eds_ops,
        nominal_speedup=Fraction(brute, upper),
        random_expected_trials_per_positive=1.0 / p_hat,
    )


def write_suspects(s: SuspectSet, path: Union[str, Path]) -> None:
    """Write one JSON object per line, sorted by (query, candidate)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for p in s.pairs:
            obj = {
                "q": p.query,
                "c": p.candidate,
                "proposers": [{"m": pr.model, "r": pr.rank} for pr in p.proposers],
            }
            fh.write(json.dumps(obj, separators=(",", ":")) + "\n")


def read_suspects(path: Union[str, Path], k: int | None = None) -> SuspectSet:
    """Read a suspect-set file.

    The file does not carry k explicitly; pass it when known, otherwise the
    smallest k consistent with the recorded ranks (max rank + 1) is used.
    """
    path = Path(path)
    merged: dict[Pair, dict[str, int]] = {}
    max_rank = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            try:
                q, c, proposers = obj["q"], obj["c"], obj["proposers"]
            except (TypeError, KeyError):
                raise CorpusFormatError(f"{path}:{lineno}: expected keys 'q', 'c', 'proposers'") from None
            if not proposers:
                raise CorpusFormatError(f"{path}:{lineno}: pair has no proposers")
            if (q, c) in merged:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate pair ({q!r}, {c!r})")
            row: dict[str, int] = {}
            for pr in proposers:
                try:
                    m, r = pr["m"], int(pr["r"])
                except (TypeError, KeyError, ValueError):
                    raise CorpusFormatError(f"{path}:{lineno}: proposer needs keys 'm' and 'r'") from None
                if r < 0:
                    raise CorpusFormatError(f"{path}:{lineno}: negative rank")
                if m in row:
                    raise CorpusFormatError(f"{path}:{lineno}: duplicate proposer {m!r}")
                row[m] = r
                max_rank = max(max_rank, r)
            merged[(q, c)] = row
    if not merged:
        raise CorpusFormatError(f"{path}: suspect file has no pairs")
    if k is None:
        k = max_rank + 1
    elif k <= max_rank:
        raise ValidationError(f"k={k} is inconsistent with recorded rank {max_rank}")
    models = sorted({m for row in merged.values() for m in row})
    per_model_sets = {
        m: frozenset(pair for pair, row in merged.items() if m in row) for m in models
    }
    pairs = tuple(
        SuspectPair(
            query=q,
            candidate=c,
            proposers=tuple(Proposal(model=m, rank=r) for m, r in sorted(merged[(q, c)].items())),
        )
        for q, c in sorted(merged)
    )
    return SuspectSet(
        k=k,
        models=tuple(models),
        pairs=pairs,
        num_queries=len({q for q, _ in merged}),
        per_model_sets=per_model_sets,
    )


def overlap_table(s: SuspectSet) -> str:
    """Render the overlap matrix as a tab-separated table with a header row."""
    matrix = overlap_matrix(s)
    lines = ["\t" + "\t".join(s.models)]
    for i, m in enumerate(s.models):
        cells = []
        for j in range(len(s.models)):
            cells.append("-" if i == j else f"{matrix[i, j]:.2f}")
        lines.append(m + "\t" + "\t".join(cells))
    return "\n".join(lines) + "\n"
