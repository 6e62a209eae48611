"""Corpus handling and deterministic candidate ranking.

A corpus is an immutable catalog of item ids (the search pool) plus query
ids (which may or may not live inside the pool).  Similarity models come in
two flavours: embedding tables, scored with cosine similarity, and
precomputed score lists.  Both produce rank lists with a fixed tie-break so
that every downstream artifact is reproducible byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import CorpusFormatError, UnknownItemError, ValidationError

ItemId = str

EMBEDDINGS_MAGIC = "#eds-embeddings"
SCORES_MAGIC = "#eds-scores"
FORMAT_VERSION = "v1"

_ROLES = ("item", "query", "both")


def check_item_id(item_id: str, where: str = "") -> str:
    """Validate an item id: non-empty, no whitespace characters."""
    if not isinstance(item_id, str) or not item_id or any(ch.isspace() for ch in item_id):
        suffix = f" ({where})" if where else ""
        raise ValidationError(f"invalid item id {item_id!r}: must be non-empty with no whitespace{suffix}")
    return item_id


@dataclass(frozen=True)
class Corpus:
    """Immutable catalog of items and queries with optional sidecar labels.

    ``items`` is the candidate pool D.  ``queries`` is the query set Q; a
    query may also be an item, in which case it is excluded from its own
    candidate pool.  ``image_paths``, ``id_labels`` and ``category_labels``
    are optional per-id annotations.
    """

    items: tuple[ItemId, ...]
    queries: tuple[ItemId, ...]
    image_paths: Mapping[ItemId, str] = field(default_factory=dict)
    id_labels: Mapping[ItemId, str] = field(default_factory=dict)
    category_labels: Mapping[ItemId, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for item in self.items:
            check_item_id(item, "items")
        for q in self.queries:
            check_item_id(q, "queries")
        if len(set(self.items)) != len(self.items):
            raise ValidationError("duplicate ids in corpus items")
        if len(set(self.queries)) != len(self.queries):
            raise ValidationError("duplicate ids in corpus queries")
        object.__setattr__(self, "_item_set", frozenset(self.items))
        object.__setattr__(self, "_item_pos", {it: i for i, it in enumerate(self.items)})

    @property
    def item_set(self) -> frozenset:
        return self._item_set  # type: ignore[attr-defined]

    def item_position(self, item_id: ItemId) -> int:
        try:
            return self._item_pos[item_id]  # type: ignore[attr-defined]
        except KeyError:
            raise UnknownItemError(f"{item_id!r} is not a corpus item") from None

    def candidates_for(self, query: ItemId) -> tuple[ItemId, ...]:
        """The candidate pool for one query: every item except the query itself."""
        if query in self._item_set:  # type: ignore[attr-defined]
            return tuple(it for it in self.items if it != query)
        return self.items

    def num_candidates_for(self, query: ItemId) -> int:
        return len(self.items) - (1 if query in self._item_set else 0)  # type: ignore[attr-defined]

    def pair_universe_size(self) -> int:
        """Total number of (query, candidate) pairs a brute-force scan would score."""
        return sum(self.num_candidates_for(q) for q in self.queries)


def load_corpus(path: Union[str, Path]) -> Corpus:
    """Read a tab-separated corpus manifest.

    Columns: item_id, role (item|query|both), then optional image_path,
    identity label, category label.  Trailing optional columns may be empty.
    """
    path = Path(path)
    items: list[ItemId] = []
    queries: list[ItemId] = []
    image_paths: dict[ItemId, str] = {}
    id_labels: dict[ItemId, str] = {}
    category_labels: dict[ItemId, str] = {}
    seen: set[ItemId] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) < 2 or len(fields) > 5:
                raise CorpusFormatError(f"{path}:{lineno}: expected 2 to 5 tab-separated fields, got {len(fields)}")
            item_id = fields[0].strip()
            role = fields[1].strip()
            try:
                check_item_id(item_id)
            except ValidationError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            if role not in _ROLES:
                raise CorpusFormatError(f"{path}:{lineno}: role must be one of {_ROLES}, got {role!r}")
            if item_id in seen:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate id {item_id!r}")
            seen.add(item_id)
            if role in ("item", "both"):
                items.append(item_id)
            if role in ("query", "both"):
                queries.append(item_id)
            extras = [f.strip() for f in fields[2:]]
            extras += [""] * (3 - len(extras))
            if extras[0]:
                image_paths[item_id] = extras[0]
            if extras[1]:
                id_labels[item_id] = extras[1]
            if extras[2]:
                category_labels[item_id] = extras[2]
    if not items:
        raise CorpusFormatError(f"{path}: manifest defines no items")
    return Corpus(
        items=tuple(items),
        queries=tuple(queries),
        image_paths=image_paths,
        id_labels=id_labels,
        category_labels=category_labels,
    )


def write_corpus(corpus: Corpus, path: Union[str, Path]) -> None:
    path = Path(path)
    queries = set(corpus.queries)
    items = set(corpus.items)
    ordered = list(corpus.items) + [q for q in corpus.queries if q not in items]
    with path.open("w", encoding="utf-8") as fh:
        for item_id in ordered:
            if item_id in items and item_id in queries:
                role = "both"
            elif item_id in queries:
                role = "query"
            else:
                role = "item"
            fields = [
                item_id,
                role,
                corpus.image_paths.get(item_id, ""),
                corpus.id_labels.get(item_id, ""),
                corpus.category_labels.get(item_id, ""),
            ]
            while len(fields) > 2 and fields[-1] == "":
                fields.pop()
            fh.write("\t".join(fields) + "\n")


class EmbeddingModel:
    """A named table of fixed-width vectors scored with cosine similarity."""

    source_kind = "embeddings"

    def __init__(self, name: str, ids: Sequence[ItemId], matrix: np.ndarray) -> None:
        if not name:
            raise ValidationError("model name must be non-empty")
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ValidationError("embedding matrix must be 2-D with one row per id")
        if matrix.shape[1] < 1:
            raise ValidationError("embedding dimension must be at least 1")
        if len(set(ids)) != len(ids):
            raise ValidationError(f"model {name!r} has duplicate item ids")
        if not np.all(np.isfinite(matrix)):
            raise ValidationError(f"model {name!r} has non-finite vector components")
        norms = np.linalg.norm(matrix, axis=1)
        if np.any(norms == 0.0):
            bad = ids[int(np.argmax(norms == 0.0))]
            raise ValidationError(f"model {name!r} has a zero-norm vector for {bad!r}")
        self.name = name
        self.ids = tuple(ids)
        self.dim = int(matrix.shape[1])
        self._index = {item: i for i, item in enumerate(self.ids)}
        # Unit rows make cosine a plain dot product and keep it exactly symmetric.
        self._unit = matrix / norms[:, None]

    def covers(self, item_id: ItemId) -> bool:
        return item_id in self._index

    def unit_vector(self, item_id: ItemId) -> np.ndarray:
        try:
            return self._unit[self._index[item_id]]
        except KeyError:
            raise UnknownItemError(f"model {self.name!r} has no vector for {item_id!r}") from None

    def similarity(self, a: ItemId, b: ItemId) -> float:
        """Cosine similarity between two covered ids."""
        return float(np.dot(self.unit_vector(a), self.unit_vector(b)))

    def scores_for(self, query: ItemId, candidates: Sequence[ItemId]) -> np.ndarray:
        qv = self.unit_vector(query)
        rows = []
        for c in candidates:
            if c not in self._index:
                raise UnknownItemError(f"model {self.name!r} has no vector for {c!r}")
            rows.append(self._index[c])
        if not rows:
            return np.empty(0, dtype=np.float64)
        return self._unit[np.asarray(rows)] @ qv


class ScoreListModel:
    """A named set of precomputed (query, candidate, score) triples."""

    source_kind = "scores"

    def __init__(self, name: str, scores: Mapping[ItemId, Mapping[ItemId, float]]) -> None:
        if not name:
            raise ValidationError("model name must be non-empty")
        self.name = name
        self._scores: dict[ItemId, dict[ItemId, float]] = {}
        for q, row in scores.items():
            check_item_id(q, f"model {name}")
            inner: dict[ItemId, float] = {}
            for c, s in row.items():
                check_item_id(c, f"model {name}")
                s = float(s)
                if not math.isfinite(s):
                    raise ValidationError(f"model {name!r} has a non-finite score for ({q!r}, {c!r})")
                inner[c] = s
            self._scores[q] = inner

    def covers_query(self, query: ItemId) -> bool:
        return query in self._scores

    def scored_candidates(self, query: ItemId) -> Mapping[ItemId, float]:
        try:
            return self._scores[query]
        except KeyError:
            raise UnknownItemError(f"model {self.name!r} has no scores for query {query!r}") from None

    def similarity(self, a: ItemId, b: ItemId) -> float:
        row = self.scored_candidates(a)
        try:
            return row[b]
        except KeyError:
            raise UnknownItemError(f"model {self.name!r} has no score for ({a!r}, {b!r})") from None


ModelHandle = Union[EmbeddingModel, ScoreListModel]


@dataclass(frozen=True)
class RankEntry:
    candidate: ItemId
    score: float
    rank: int


@dataclass(frozen=True)
class RankList:
    """Candidates for one query, best first, ranks starting at 0.

    ``truncated`` is set when fewer candidates were available than asked for.
    """

    query: ItemId
    entries: tuple[RankEntry, ...]
    truncated: bool = False


def _order(candidates: Sequence[ItemId], scores: np.ndarray) -> np.ndarray:
    # Descending score; exact ties broken by ascending candidate id so that
    # rankings never depend on input order.
    if len(candidates) == 0:
        return np.empty(0, dtype=np.intp)
    cand_arr = np.asarray(candidates, dtype=np.str_)
    return np.lexsort((cand_arr, -scores))


def rank_candidates(model: ModelHandle, query: ItemId, corpus: Corpus, top_n: int) -> RankList:
    """Rank the corpus candidate pool of ``query`` under ``model``.

    The query itself is never a candidate.  Score-list models rank only the
    candidates they scored; embedding models rank the whole pool.
    """
    if top_n < 1:
        raise ValidationError(f"top_n must be at least 1, got {top_n}")
    if isinstance(model, EmbeddingModel):
        candidates = list(corpus.candidates_for(query))
        scores = model.scores_for(query, candidates)
    else:
        scored = model.scored_candidates(query)
        candidates = [c for c in scored if c != query and c in corpus.item_set]
        scores = np.asarray([scored[c] for c in candidates], dtype=np.float64)
    order = _order(candidates, scores)[:top_n]
    entries = tuple(
        RankEntry(candidate=candidates[i], score=float(scores[i]), rank=r)
        for r, i in enumerate(order)
    )
    return RankList(query=query, entries=entries, truncated=len(entries) < top_n)


def load_embeddings(path: Union[str, Path], model_name: str | None = None) -> EmbeddingModel:
    """Read an embedding table.

    Header line: ``#eds-embeddings v1 <model_name> <dim>``.  Each row:
    ``item_id<TAB>v1,v2,...`` with exactly <dim> comma-separated components.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split()
        if len(parts) != 4 or parts[0] != EMBEDDINGS_MAGIC or parts[1] != FORMAT_VERSION:
            raise CorpusFormatError(f"{path}:1: expected header '{EMBEDDINGS_MAGIC} {FORMAT_VERSION} <model> <dim>'")
        name = model_name or parts[2]
        try:
            dim = int(parts[3])
        except ValueError:
            raise CorpusFormatError(f"{path}:1: dimension {parts[3]!r} is not an integer") from None
        if dim < 1:
            raise CorpusFormatError(f"{path}:1: dimension must be positive, got {dim}")
        ids: list[ItemId] = []
        rows: list[np.ndarray] = []
        seen: set[ItemId] = set()
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise CorpusFormatError(f"{path}:{lineno}: expected 'item_id<TAB>components', got {len(fields)} fields")
            item_id = fields[0].strip()
            try:
                check_item_id(item_id)
            except ValidationError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            if item_id in seen:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate id {item_id!r}")
            seen.add(item_id)
            comps = fields[1].split(",")
            if len(comps) != dim:
                raise CorpusFormatError(f"{path}:{lineno}: expected {dim} components, got {len(comps)}")
            try:
                vec = np.asarray([float(c) for c in comps], dtype=np.float64)
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: non-numeric vector component") from None
            if not np.all(np.isfinite(vec)):
                raise CorpusFormatError(f"{path}:{lineno}: non-finite vector component")
            if not np.any(vec):
                raise CorpusFormatError(f"{path}:{lineno}: zero-norm vector for {item_id!r}")
            ids.append(item_id)
            rows.append(vec)
    if not ids:
        raise CorpusFormatError(f"{path}: embedding table has no rows")
    return EmbeddingModel(name=name, ids=ids, matrix=np.vstack(rows))


def write_embeddings(model_name: str, vectors: Mapping[ItemId, Sequence[float]], path: Union[str, Path]) -> None:
    path = Path(path)
    dims = {len(v) for v in vectors.values()}
    if len(dims) != 1:
        raise ValidationError("all vectors must share one dimension")
    dim = dims.pop()
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{EMBEDDINGS_MAGIC} {FORMAT_VERSION} {model_name} {dim}\n")
        for item_id, vec in vectors.items():
            fh.write(f"{item_id}\t{','.join(repr(float(x)) for x in vec)}\n")


def load_scores(path: Union[str, Path], model_name: str | None = None) -> ScoreListModel:
    """Read a score list.

    Header line: ``#eds-scores v1 <model_name>``.  Each row:
    ``query<TAB>candidate<TAB>score``.  Duplicate (query, candidate) rows
    are rejected.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        parts = header.split()
        if len(parts) != 3 or parts[0] != SCORES_MAGIC or parts[1] != FORMAT_VERSION:
            raise CorpusFormatError(f"{path}:1: expected header '{SCORES_MAGIC} {FORMAT_VERSION} <model>'")
        name = model_name or parts[2]
        scores: dict[ItemId, dict[ItemId, float]] = {}
        count = 0
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise CorpusFormatError(f"{path}:{lineno}: expected 'query<TAB>candidate<TAB>score', got {len(fields)} fields")
            q, c, stext = (f.strip() for f in fields)
            try:
                check_item_id(q)
                check_item_id(c)
            except ValidationError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: {exc}") from None
            try:
                s = float(stext)
            except ValueError:
                raise CorpusFormatError(f"{path}:{lineno}: non-numeric score {stext!r}") from None
            if not math.isfinite(s):
                raise CorpusFormatError(f"{path}:{lineno}: non-finite score")
            row = scores.setdefault(q, {})
            if c in row:
                raise CorpusFormatError(f"{path}:{lineno}: duplicate pair ({q!r}, {c!r})")
            row[c] = s
            count += 1
    if count == 0:
        raise CorpusFormatError(f"{path}: score list has no rows")
    return ScoreListModel(name=name, scores=scores)


def write_scores(model_name: str, scores: Mapping[ItemId, Mapping[ItemId, float]], path: Union[str, Path]) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{SCORES_MAGIC} {FORMAT_VERSION} {model_name}\n")
        for q, row in scores.items():
            for c, s in row.items():
                fh.write(f"{q}\t{c}\t{repr(float(s))}\n")


def load_model(path: Union[str, Path], model_name: str | None = None) -> ModelHandle:
    """Load either model file format, sniffing the header."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline()
    if header.startswith(EMBEDDINGS_MAGIC):
        return load_embeddings(path, model_name)
    if header.startswith(SCORES_MAGIC):
        return load_scores(path, model_name)
    raise CorpusFormatError(f"{path}:1: unrecognized model file header")


def identity_ground_truth(corpus: Corpus):
    """Derive labels from identity sidecar data: a pair is positive exactly
    when query and candidate are distinct ids sharing an identity label.

    Returns a ground-truth store labeling every (query, candidate) pair in
    the corpus.  Pairs where either side lacks an identity label are
    negative.
    """
    from .annotation import GroundTruth

    if not corpus.id_labels:
        raise ValidationError("corpus has no identity labels")
    if not corpus.queries:
        raise ValidationError("corpus has no queries")
    labels: dict[tuple[ItemId, ItemId], int] = {}
    for q in corpus.queries:
        qid = corpus.id_labels.get(q)
        for c in corpus.candidates_for(q):
            cid = corpus.id_labels.get(c)
            labels[(q, c)] = 1 if qid is not None and qid == cid else 0
    return GroundTruth.from_labels(labels, source="identity-derived")
