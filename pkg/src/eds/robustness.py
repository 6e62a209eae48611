"""Leave-one-generator-out robustness of model rankings.

The labeled pool is built by an ensemble of generators, so any one of them
could in principle tilt the evaluation toward itself.  Dropping each
generator's uniquely-proposed pairs in turn and re-running the AUCs shows
how much the model ranking depends on any single proposer; rank
correlation against the full pool plus a permutation test quantifies it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np
from scipy.stats import rankdata

from .annotation import GroundTruth
from .corpus import Corpus, ItemId, ModelHandle
from .discovery import SuspectSet
from .errors import EvaluationError, ValidationError
from .metrics import ModelRanks, auc_summary

Pair = tuple[ItemId, ItemId]

EXACT_PERMUTATION_LIMIT = 10  # enumerate n! exactly up to here
MIN_MC_DRAWS = 10000


@dataclass(frozen=True)
class LooSubset:
    """Labels that survive removing one generator's unique proposals.

    Pairs the excluded generator co-proposed with another model stay in.
    """

    excluded_model: str
    labels: Mapping[Pair, int]


def _as_labels(gt: Union[GroundTruth, Mapping[Pair, int]]) -> dict[Pair, int]:
    if isinstance(gt, GroundTruth):
        return gt.resolve()
    return dict(gt)


def leave_one_out_subsets(s: SuspectSet, gt: Union[GroundTruth, Mapping[Pair, int]]) -> list[LooSubset]:
    labels = _as_labels(gt)
    if not labels:
        raise ValidationError("no labeled pairs")
    proposers = s.proposer_map()
    for pair in labels:
        if pair not in proposers:
            raise ValidationError(f"labeled pair {pair!r} is not in the suspect set")
    subsets = []
    for m in s.models:
        kept = {pair: lbl for pair, lbl in labels.items()
                if any(p != m for p in proposers[pair])}
        subsets.append(LooSubset(excluded_model=m, labels=kept))
    return subsets


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Rank correlation; ties get average ranks."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError("inputs must be 1-D sequences of equal length")
    if len(a) < 2:
        raise ValidationError("need at least two values")
    ra = rankdata(a)
    rb = rankdata(b)
    if np.ptp(ra) == 0 or np.ptp(rb) == 0:
        raise ValidationError("zero variance in a ranking")
    ra -= ra.mean()
    rb -= rb.mean()
    return float(np.dot(ra, rb) / math.sqrt(np.dot(ra, ra) * np.dot(rb, rb)))


def permutation_p_value(a: Sequence[float], b: Sequence[float], *, method: str = "auto",
                        seed: int = 0, draws: int = MIN_MC_DRAWS) -> tuple[float, str]:
    """One-sided p-value for the observed rank correlation.

    Fraction of permutations of ``b`` whose correlation with ``a`` is at
    least the observed one; the identity permutation always counts, so the
    smallest achievable p is 1/n! exactly or 1/(draws+1) by Monte Carlo.
    Returns (p, method_used).
    """
    if method not in ("auto", "exact", "mc"):
        raise ValidationError(f"method must be auto, exact, or mc, got {method!r}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValidationError("inputs must be 1-D sequences of equal length, at least 2 long")
    n = len(a)
    ra = rankdata(a)
    rb = rankdata(b)
    if np.ptp(ra) == 0 or np.ptp(rb) == 0:
        raise ValidationError("zero variance in a ranking")
    x = ra - ra.mean()
    y = rb - rb.mean()
    denom = math.sqrt(float(np.dot(x, x)) * float(np.dot(y, y)))
    observed = float(np.dot(x, y)) / denom
    # Small slack keeps permutations that tie the observed value from being
    # dropped by float rounding; distinct correlations sit far apart.
    threshold = observed - 1e-9

    if method == "auto":
        method = "exact" if n <= EXACT_PERMUTATION_LIMIT else "mc"
    if method == "exact":
        hits = 0
        total = 0
        chunk: list[Sequence[int]] = []
        for perm in itertools.permutations(range(n)):
            chunk.append(perm)
            if len(chunk) == 10000:
                corr = (y[np.asarray(chunk)] @ x) / denom
                hits += int(np.count_nonzero(corr >= threshold))
                total += len(chunk)
                chunk = []
        if chunk:
            corr = (y[np.asarray(chunk)] @ x) / denom
            hits += int(np.count_nonzero(corr >= threshold))
            total += len(chunk)
        return hits / total, "exact"
    if draws < MIN_MC_DRAWS:
        raise ValidationError(f"Monte Carlo needs at least {MIN_MC_DRAWS} draws, got {draws}")
    rng = np.random.default_rng(seed)
    permuted = rng.permuted(np.tile(y, (draws, 1)), axis=1)
    corr = (permuted @ x) / denom
    hits = int(np.count_nonzero(corr >= threshold))
    return (1 + hits) / (draws + 1), "mc"


@dataclass(frozen=True)
class RobustnessReport:
    """Per-subset AUCs, their spread, and ranking agreement with the full pool."""

    models: tuple[str, ...]
    full: Mapping[str, Mapping[str, float | None]]           # metric -> model -> auc
    per_subset: Mapping[str, Mapping[str, Mapping[str, float | None]]]  # excluded -> metric -> model -> auc
    mean_std: Mapping[str, Mapping[str, tuple[float, float] | None]]    # metric -> model -> (mean, population std)
    rank_agreement: Mapping[str, Mapping[str, dict]]          # excluded -> metric -> {sc, p_value, method}
    subset_sizes: Mapping[str, int]
    config: Mapping[str, object]

    def ranking(self, metric: str = "micro", excluded: str | None = None) -> tuple[str, ...]:
        """Models best-first under one metric, on the full pool or one subset."""
        source = self.full[metric] if excluded is None else self.per_subset[excluded][metric]
        scored = [(m, v) for m, v in source.items() if v is not None]
        return tuple(m for m, _ in sorted(scored, key=lambda t: (-t[1], t[0])))

    def to_dict(self) -> dict:
        return {
            "models": list(self.models),
            "full": {metric: dict(vals) for metric, vals in self.full.items()},
            "per_subset": {
                excl: {metric: dict(vals) for metric, vals in metrics.items()}
                for excl, metrics in self.per_subset.items()
            },
            "mean_std": {
                metric: {m: (list(ms) if ms is not None else None) for m, ms in vals.items()}
                for metric, vals in self.mean_std.items()
            },
            "rank_agreement": {
                excl: {metric: dict(info) for metric, info in metrics.items()}
                for excl, metrics in self.rank_agreement.items()
            },
            "subset_sizes": dict(self.subset_sizes),
            "config": dict(self.config),
        }


def _auc_cell(ranks: ModelRanks, labels: Mapping[Pair, int]) -> tuple[float | None, float | None]:
    if not labels:
        return None, None
    try:
        micro, macro, _, _ = auc_summary(ranks, labels)
    except EvaluationError:
        return None, None
    return micro, macro


def _agreement(full_vec: list[float | None], sub_vec: list[float | None], *,
               p_method: str, seed: int, draws: int) -> dict:
    paired = [(f, s) for f, s in zip(full_vec, sub_vec) if f is not None and s is not None]
    if len(paired) < 2:
        return {"sc": None, "p_value": None, "method": None, "note": "fewer than two comparable models"}
    fv = [f for f, _ in paired]
    sv = [s for _, s in paired]
    f_const = max(fv) == min(fv)
    s_const = max(sv) == min(sv)
    if f_const and s_const:
        # Both rankings are fully tied: identical degenerate orderings.
        return {"sc": 1.0, "p_value": 1.0, "method": "degenerate"}
    if f_const or s_const:
        return {"sc": None, "p_value": None, "method": None, "note": "one ranking has zero variance"}
    sc = spearman(fv, sv)
    p, method = permutation_p_value(fv, sv, method=p_method, seed=seed, draws=draws)
    return {"sc": sc, "p_value": p, "method": method}


def loo_report(corpus: Corpus, models: Sequence[ModelHandle], s: SuspectSet,
               gt: Union[GroundTruth, Mapping[Pair, int]], *,
               p_method: str = "auto", seed: int = 0, draws: int = MIN_MC_DRAWS) -> RobustnessReport:
    """Run the leave-one-generator-out sweep for a set of evaluated models.

    Cells where a subset leaves a model with no evaluable query are None
    and noted rather than failing the whole sweep.
    """
    if not models:
        raise ValidationError("need at least one model to evaluate")
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate model names")
    labels = _as_labels(gt)
    subsets = leave_one_out_subsets(s, labels)
    rank_handles = [ModelRanks(m, corpus) for m in models]

    full: dict[str, dict[str, float | None]] = {"micro": {}, "macro": {}}
    for rh in rank_handles:
        micro, macro = _auc_cell(rh, labels)
        full["micro"][rh.name] = micro
        full["macro"][rh.name] = macro

    per_subset: dict[str, dict[str, dict[str, float | None]]] = {}
    subset_sizes: dict[str, int] = {}
    for sub in subsets:
        cell: dict[str, dict[str, float | None]] = {"micro": {}, "macro": {}}
        for rh in rank_handles:
            micro, macro = _auc_cell(rh, sub.labels)
            cell["micro"][rh.name] = micro
            cell["macro"][rh.name] = macro
        per_subset[sub.excluded_model] = cell
        subset_sizes[sub.excluded_model] = len(sub.labels)

    mean_std: dict[str, dict[str, tuple[float, float] | None]] = {"micro": {}, "macro": {}}
    for metric in ("micro", "macro"):
        for name in names:
            vals = [per_subset[sub.excluded_model][metric][name] for sub in subsets]
            present = [v for v in vals if v is not None]
            if not present:
                mean_std[metric][name] = None
                continue
            arr = np.asarray(present)
            mean_std[metric][name] = (float(arr.mean()), float(arr.std()))

    rank_agreement: dict[str, dict[str, dict]] = {}
    for sub in subsets:
        excl = sub.excluded_model
        rank_agreement[excl] = {}
        for metric in ("micro", "macro"):
            full_vec = [full[metric][name] for name in names]
            sub_vec = [per_subset[excl][metric][name] for name in names]
            rank_agreement[excl][metric] = _agreement(full_vec, sub_vec, p_method=p_method,
                                                      seed=seed, draws=draws)

    return RobustnessReport(
        models=tuple(names),
        full=full,
        per_subset=per_subset,
        mean_std=mean_std,
        rank_agreement=rank_agreement,
        subset_sizes=subset_sizes,
        config={"p_method": p_method, "seed": seed, "draws": draws,
                "generators": list(s.models), "std": "population"},
    )
