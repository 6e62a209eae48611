"""Expert annotation and prevalence estimation.

Votes are append-only: a later vote by the same expert on the same pair
supersedes the earlier one, and labels are resolved by strict majority with
ties negative.  The module also estimates how rare positives are in the
full pair universe, which is what justifies reviewing only suspects.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

from .corpus import Corpus, ItemId, check_item_id
from .errors import CorpusFormatError, ValidationError, VoteError

Pair = tuple[ItemId, ItemId]

GT_SOURCES = ("expert-resolved", "identity-derived", "synthetic")


@dataclass(frozen=True)
class Vote:
    query: ItemId
    candidate: ItemId
    expert: str
    label: int
    ts: datetime

    def __post_init__(self) -> None:
        check_item_id(self.query, "vote")
        check_item_id(self.candidate, "vote")
        if not self.expert:
            raise VoteError("vote has an empty expert id")
        if self.label not in (0, 1):
            raise VoteError(f"vote label must be 0 or 1, got {self.label!r}")
        if self.ts.tzinfo is None:
            raise VoteError("vote timestamp must be timezone-aware")

    @property
    def pair(self) -> Pair:
        return (self.query, self.candidate)


def make_vote(query: ItemId, candidate: ItemId, expert: str, label: int, ts: datetime | None = None) -> Vote:
    return Vote(query=query, candidate=candidate, expert=expert, label=label,
                ts=ts or datetime.now(timezone.utc))


class GroundTruth:
    """Labeled pairs, either resolved from expert votes or taken directly
    from a derived source (identity sidecar data or synthetic construction).

    In voting mode the full history is kept; per (pair, expert) only the
    latest vote counts.
    """

    def __init__(self, experts: Sequence[str] = (), valid_pairs: Iterable[Pair] | None = None,
                 source: str = "expert-resolved") -> None:
        if source not in GT_SOURCES:
            raise ValidationError(f"source must be one of {GT_SOURCES}, got {source!r}")
        if source == "expert-resolved" and not experts:
            raise ValidationError("expert-resolved ground truth needs a non-empty expert roster")
        if len(set(experts)) != len(tuple(experts)):
            raise ValidationError("duplicate expert ids")
        self.source = source
        self.experts = tuple(experts)
        self.valid_pairs = frozenset(valid_pairs) if valid_pairs is not None else None
        self.votes: list[Vote] = []
        self._effective: dict[Pair, dict[str, int]] = {}
        self._direct_labels: dict[Pair, int] | None = None

    @classmethod
    def from_labels(cls, labels: Mapping[Pair, int], source: str = "synthetic") -> "GroundTruth":
        """Build a store whose labels are given directly, with no vote log."""
        gt = cls(experts=("direct",) if source == "expert-resolved" else (), source=source)
        direct: dict[Pair, int] = {}
        for (q, c), lbl in labels.items():
            if lbl not in (0, 1):
                raise ValidationError(f"label for ({q!r}, {c!r}) must be 0 or 1, got {lbl!r}")
            direct[(q, c)] = int(lbl)
        gt._direct_labels = direct
        return gt

    @property
    def num_experts(self) -> int:
        return len(self.experts)

    def validate_vote(self, vote: Vote) -> None:
        if self._direct_labels is not None:
            raise VoteError(f"{self.source} ground truth takes no votes")
        if vote.expert not in self.experts:
            raise VoteError(f"unknown expert {vote.expert!r}")
        if self.valid_pairs is not None and vote.pair not in self.valid_pairs:
            raise VoteError(f"pair {vote.pair!r} is not under review")

    def record_vote(self, vote: Vote) -> None:
        self.validate_vote(vote)
        self.votes.append(vote)
        self._effective.setdefault(vote.pair, {})[vote.expert] = vote.label

    def effective_votes(self) -> dict[Pair, dict[str, int]]:
        """Latest vote per (pair, expert)."""
        return {pair: dict(by_expert) for pair, by_expert in self._effective.items()}

    def vote_count(self, pair: Pair) -> int:
        return len(self._effective.get(pair, ()))

    def resolve(self) -> dict[Pair, int]:
        """Majority labels: positive only on a strict majority of effective
        votes; ties are negative.  Pairs with no votes are omitted."""
        if self._direct_labels is not None:
            return dict(self._direct_labels)
        out: dict[Pair, int] = {}
        for pair, by_expert in self._effective.items():
            votes = list(by_expert.values())
            out[pair] = 1 if 2 * sum(votes) > len(votes) else 0
        return out


def record_vote(gt: GroundTruth, vote: Vote) -> GroundTruth:
    gt.record_vote(vote)
    return gt


def resolve_labels(gt: GroundTruth) -> dict[Pair, int]:
    return gt.resolve()


def resolved_rows(gt: GroundTruth) -> list[tuple[ItemId, ItemId, int, int]]:
    """Sorted (query, candidate, label, num_votes) rows for export."""
    labels = gt.resolve()
    return [(q, c, labels[(q, c)], gt.vote_count((q, c))) for q, c in sorted(labels)]


# --- vote log serialization ---------------------------------------------

def vote_to_json(vote: Vote) -> str:
    return json.dumps(
        {"q": vote.query, "c": vote.candidate, "expert": vote.expert,
         "label": vote.label, "ts": vote.ts.isoformat()},
        separators=(",", ":"),
    )


def vote_from_json(line: str, where: str = "vote log") -> Vote:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"{where}: invalid JSON: {exc}") from None
    try:
        ts_text = obj["ts"]
        if ts_text.endswith("Z"):
            ts_text = ts_text[:-1] + "+00:00"
        return Vote(query=obj["q"], candidate=obj["c"], expert=obj["expert"],
                    label=int(obj["label"]), ts=datetime.fromisoformat(ts_text))
    except (TypeError, KeyError, ValueError) as exc:
        raise CorpusFormatError(f"{where}: bad vote record: {exc}") from None


def read_vote_log(path: Union[str, Path]) -> list[Vote]:
    path = Path(path)
    votes = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line:
                votes.append(vote_from_json(line, where=f"{path}:{lineno}"))
    return votes


def append_votes(path: Union[str, Path], votes: Iterable[Vote]) -> None:
    path = Path(path)
    with path.open("a", encoding="utf-8") as fh:
        for v in votes:
            fh.write(vote_to_json(v) + "\n")


def write_labels(rows: Iterable[tuple[ItemId, ItemId, int, int]], path: Union[str, Path]) -> None:
    """Write resolved labels as query<TAB>candidate<TAB>label<TAB>num_votes."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for q, c, label, num_votes in rows:
            fh.write(f"{q}\t{c}\t{label}\t{num_votes}\n")


def read_labels(path: Union[str, Path]) -> dict[Pair, int]:
    path = Path(path)
    labels: dict[Pair, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise CorpusFormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
            q, c, label_text, _votes = fields
            if label_text not in ("0", "1"):
                raise CorpusFormatError(f"{path}:{lineno}: label must be 0 or 1, got {label_text!r}")
            if (q, c) in labels:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate pair ({q!r}, {c!r})")
            labels[(q, c)] = int(label_text)
    if not labels:
        raise CorpusFormatError(f"{path}: label file has no rows")
    return labels


# --- prevalence estimation ----------------------------------------------

@dataclass(frozen=True)
class PEstimate:
    """Positive-pair prevalence estimated from an annotated random sample of
    the full pair universe, floored by the lower bound already implied by
    the positives found so far."""

    a: int
    b: int
    p_lb: float
    p_hat: float
    epsilon: float | None = None
    q_prob: float | None = None
    chebyshev_bound: float | None = None
    bound_vacuous: bool = False

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "p_lb": self.p_lb,
            "p_hat": self.p_hat,
            "epsilon": self.epsilon,
            "q_prob": self.q_prob,
            "chebyshev_bound": self.chebyshev_bound,
            "bound_vacuous": self.bound_vacuous,
        }


def lower_bound_p(num_positives: int, corpus: Corpus) -> float:
    """Prevalence floor: confirmed positives over the full pair universe."""
    if num_positives < 0:
        raise ValidationError(f"num_positives must be non-negative, got {num_positives}")
    universe = corpus.pair_universe_size()
    if universe == 0:
        raise ValidationError("corpus has no (query, candidate) pairs")
    if num_positives > universe:
        raise ValidationError("more positives than pairs in the universe")
    return num_positives / universe


def estimate_p(a: int, b: int, p_lb: float, epsilon: float | None = None,
               q_prob: float | None = None) -> PEstimate:
    """Estimate prevalence from ``a`` positives in ``b`` random draws.

    The estimate is max(p_lb, a / b): a random sample can only raise the
    floor established by positives already confirmed.  When ``epsilon`` is
    given, the one-sided concentration bound p_hat / (b * epsilon^2) on
    P(|a/b - p| >= epsilon) is attached; a bound at or above 1 is flagged
    vacuous.
    """
    if b < 1:
        raise ValidationError(f"sample size b must be at least 1, got {b}")
    if not 0 <= a <= b:
        raise ValidationError(f"positive count a must be in [0, {b}], got {a}")
    if not 0.0 <= p_lb <= 1.0:
        raise ValidationError(f"p_lb must be in [0, 1], got {p_lb}")
    p_hat = max(p_lb, a / b)
    bound = None
    vacuous = False
    if epsilon is not None:
        if epsilon <= 0:
            raise ValidationError(f"epsilon must be positive, got {epsilon}")
        bound = chebyshev_error_bound(p_hat, b, epsilon)
        vacuous = bound >= 1.0
    return PEstimate(a=a, b=b, p_lb=p_lb, p_hat=p_hat, epsilon=epsilon,
                     q_prob=q_prob, chebyshev_bound=bound, bound_vacuous=vacuous)


def chebyshev_error_bound(p: float, b: int, epsilon: float) -> float:
    """Upper bound on P(|a/b - p| >= epsilon) for a binomial proportion,
    using Var <= p / b."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"p must be in [0, 1], got {p}")
    if b < 1:
        raise ValidationError(f"b must be at least 1, got {b}")
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    return p / (b * epsilon * epsilon)


def chebyshev_budget(epsilon: float, q_prob: float) -> int:
    """Sample size needed so a proportion estimate is within ``epsilon`` of
    truth except with probability ``q_prob``: ceil(1 / (epsilon * q_prob))."""
    if epsilon <= 0:
        raise ValidationError(f"epsilon must be positive, got {epsilon}")
    if not 0.0 < q_prob < 1.0:
        raise ValidationError(f"q_prob must be in (0, 1), got {q_prob}")
    raw = 1.0 / (epsilon * q_prob)
    # Guard against float noise pushing an exact integer over the ceiling.
    nearest = round(raw)
    if math.isclose(raw, nearest, rel_tol=0.0, abs_tol=1e-9):
        return int(nearest)
    return math.ceil(raw)


def sample_annotation_pairs(corpus: Corpus, count: int, seed: int,
                            exclude: Iterable[Pair] = ()) -> list[Pair]:
    """Draw ``count`` distinct (query, candidate) pairs uniformly from the
    full universe, excluding ``exclude`` (typically the suspect set).

    Deterministic for a given seed.  Used to annotate an unbiased sample for
    prevalence estimation.
    """
    if count < 0:
        raise ValidationError(f"count must be non-negative, got {count}")
    excluded = frozenset(exclude)
    prefix: list[int] = [0]
    for q in corpus.queries:
        prefix.append(prefix[-1] + corpus.num_candidates_for(q))
    total = prefix[-1]
    query_set = set(corpus.queries)
    in_universe = sum(
        1 for (q, c) in excluded
        if q in query_set and c in corpus.item_set and c != q
    )
    available = total - in_universe
    if count > available:
        raise ValidationError(f"cannot draw {count} pairs, only {available} available outside the excluded set")

    def unflatten(idx: int) -> Pair:
        lo, hi = 0, len(corpus.queries) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if prefix[mid + 1] <= idx:
                lo = mid + 1
            else:
                hi = mid
        q = corpus.queries[lo]
        offset = idx - prefix[lo]
        if q in corpus.item_set and offset >= corpus.item_position(q):
            offset += 1
        return (q, corpus.items[offset])

    rng = random.Random(seed)
    chosen: list[Pair] = []
    used: set[int] = set()
    while len(chosen) < count:
        idx = rng.randrange(total)
        if idx in used:
            continue
        used.add(idx)
        pair = unflatten(idx)
        if pair in excluded:
            continue
        chosen.append(pair)
    return chosen
