"""HTTP annotation service.

Serves suspect pairs to experts in small batches, records votes in an
append-only log (fsynced before the request is acknowledged, so a crash
never loses an acknowledged vote), and exposes progress and preview
metrics.  Restart recovery is a pure replay of the log.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

from pydantic import BaseModel

from .annotation import (
    GroundTruth,
    Vote,
    make_vote,
    read_vote_log,
    resolved_rows,
    vote_to_json,
    write_labels,
)
from .corpus import Corpus, ItemId, ModelHandle
from .discovery import SuspectSet
from .errors import EdsError, EvaluationError, ValidationError, VoteError
from .metrics import ModelRanks, evaluate_model

Pair = tuple[ItemId, ItemId]

DATA_DIR_ENV = "EDS_DATA_DIR"


class VoteStore:
    """Append-only vote log bound to a ground-truth store.

    Appends are durable (flush + fsync) before they reach memory; reopening
    the same path replays every recorded vote.
    """

    def __init__(self, path: Union[str, Path], experts: Sequence[str],
                 valid_pairs: Sequence[Pair] | None = None) -> None:
        self.path = Path(path)
        self.gt = GroundTruth(experts=experts, valid_pairs=valid_pairs, source="expert-resolved")
        self._lock = threading.Lock()
        if self.path.exists():
            for vote in read_vote_log(self.path):
                self.gt.record_vote(vote)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("a", encoding="utf-8")

    def append(self, vote: Vote) -> None:
        with self._lock:
            self.gt.validate_vote(vote)
            self._fh.write(vote_to_json(vote) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self.gt.record_vote(vote)

    def close(self) -> None:
        self._fh.close()


@dataclass(frozen=True)
class ProgressSnapshot:
    """Where the annotation campaign stands right now."""

    total_pairs: int
    fully_reviewed: int
    per_expert_done: Mapping[str, int]
    positives_so_far: int
    running_p_k: float
    p_k_defined: bool

    def to_dict(self) -> dict:
        return {
            "total_pairs": self.total_pairs,
            "fully_reviewed": self.fully_reviewed,
            "per_expert_done": dict(self.per_expert_done),
            "positives_so_far": self.positives_so_far,
            "running_p_k": self.running_p_k,
            "p_k_defined": self.p_k_defined,
        }


@dataclass(frozen=True)
class TaskItem:
    pair_id: str
    query: ItemId
    candidate: ItemId
    query_image: str | None
    candidate_image: str | None

    def to_dict(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "query": self.query,
            "candidate": self.candidate,
            "query_image": self.query_image,
            "candidate_image": self.candidate_image,
        }


class AnnotationService:
    """Dispatch, vote intake, progress, and label export over one suspect set."""

    def __init__(self, corpus: Corpus, suspects: SuspectSet, store: VoteStore,
                 data_dir: Union[str, Path, None] = None,
                 image_root: Union[str, Path, None] = None,
                 models: Mapping[str, ModelHandle] | None = None) -> None:
        self.corpus = corpus
        self.suspects = suspects
        self.store = store
        env_dir = os.environ.get(DATA_DIR_ENV)
        if env_dir:
            self.data_dir = Path(env_dir)
        elif data_dir is not None:
            self.data_dir = Path(data_dir)
        else:
            self.data_dir = store.path.parent
        self.image_root = Path(image_root) if image_root is not None else None
        self.models = dict(models or {})
        self._model_ranks: dict[str, ModelRanks] = {}
        self.pairs: tuple[Pair, ...] = tuple((p.query, p.candidate) for p in suspects.pairs)
        self._pair_index = {pair: i for i, pair in enumerate(self.pairs)}

    @property
    def experts(self) -> tuple[str, ...]:
        return self.store.gt.experts

    def pair_id_of(self, pair: Pair) -> str:
        try:
            return str(self._pair_index[pair])
        except KeyError:
            raise ValidationError(f"pair {pair!r} is not under review") from None

    def pair_of(self, pair_id: str) -> Pair:
        try:
            idx = int(pair_id)
        except ValueError:
            raise ValidationError(f"bad pair id {pair_id!r}") from None
        if not 0 <= idx < len(self.pairs):
            raise ValidationError(f"bad pair id {pair_id!r}")
        return self.pairs[idx]

    def _image_url(self, item_id: ItemId) -> str | None:
        return f"/img/{item_id}" if item_id in self.corpus.image_paths else None

    def _task_item(self, pair: Pair) -> TaskItem:
        q, c = pair
        return TaskItem(pair_id=self.pair_id_of(pair), query=q, candidate=c,
                        query_image=self._image_url(q), candidate_image=self._image_url(c))

    def next_batch(self, expert: str, batch_size: int) -> list[TaskItem]:
        """Pairs this expert still has to vote on, nearest-to-complete first.

        Deterministic given the vote state, so a refresh re-serves the same
        batch until the expert votes.
        """
        if expert not in self.experts:
            raise VoteError(f"unknown expert {expert!r}")
        if batch_size < 1:
            raise ValidationError(f"batch size must be at least 1, got {batch_size}")
        effective = self.store.gt.effective_votes()
        pending: list[tuple[int, int]] = []
        for i, pair in enumerate(self.pairs):
            by_expert = effective.get(pair, {})
            if expert in by_expert:
                continue
            pending.append((-len(by_expert), i))
        pending.sort()
        return [self._task_item(self.pairs[i]) for _, i in pending[:batch_size]]

    def submit_vote(self, expert: str, pair_id: str, label: int) -> ProgressSnapshot:
        pair = self.pair_of(pair_id)
        vote = make_vote(pair[0], pair[1], expert, label)
        self.store.append(vote)
        return self.progress()

    def progress(self) -> ProgressSnapshot:
        gt = self.store.gt
        num_experts = gt.num_experts
        effective = gt.effective_votes()
        fully = 0
        positives = 0
        per_expert = {e: 0 for e in gt.experts}
        for pair in self.pairs:
            by_expert = effective.get(pair)
            if not by_expert:
                continue
            for e in by_expert:
                per_expert[e] += 1
            if len(by_expert) >= num_experts:
                fully += 1
                votes = list(by_expert.values())
                if 2 * sum(votes) > len(votes):
                    positives += 1
        defined = fully > 0
        return ProgressSnapshot(
            total_pairs=len(self.pairs),
            fully_reviewed=fully,
            per_expert_done=per_expert,
            positives_so_far=positives,
            running_p_k=(positives / fully) if defined else 0.0,
            p_k_defined=defined,
        )

    def pair_details(self, pair_id: str) -> dict:
        pair = self.pair_of(pair_id)
        suspect = self.suspects.pairs[self._pair_index[pair]]
        by_expert = self.store.gt.effective_votes().get(pair, {})
        return {
            **self._task_item(pair).to_dict(),
            "proposers": [{"m": p.model, "r": p.rank} for p in suspect.proposers],
            "votes": len(by_expert),
            "experts_voted": sorted(by_expert),
        }

    def image_path(self, item_id: ItemId) -> Path:
        rel = self.corpus.image_paths.get(item_id)
        if rel is None:
            raise ValidationError(f"no image registered for {item_id!r}")
        path = Path(rel)
        if not path.is_absolute() and self.image_root is not None:
            path = self.image_root / path
        return path

    def resolve_to_file(self, out: Union[str, Path, None] = None) -> tuple[Path, int]:
        rows = resolved_rows(self.store.gt)
        path = Path(out) if out is not None else self.data_dir / "labels.tsv"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_labels(rows, path)
        return path, len(rows)

    def metrics_preview(self, model_name: str, ks: Sequence[int] = (5, 9)) -> dict:
        if model_name not in self.models:
            raise ValidationError(f"unknown model {model_name!r}")
        labels = self.store.gt.resolve()
        if model_name not in self._model_ranks:
            self._model_ranks[model_name] = ModelRanks(self.models[model_name], self.corpus)
        report = evaluate_model(self._model_ranks[model_name], labels, ks=ks)
        return report.to_dict()


# Request bodies live at module scope so their annotations resolve when the
# routes are registered.
class VoteIn(BaseModel):
    pair_id: str
    expert: str
    label: int


class ResolveIn(BaseModel):
    out: str | None = None


def create_app(service: AnnotationService, static_dir: Union[str, Path, None] = None):
    """Wire an annotation service into a FastAPI app."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import FileResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="eds annotation service")

    @app.get("/api/meta")
    def meta() -> dict:
        return {
            "experts": list(service.experts),
            "total_pairs": len(service.pairs),
            "k": service.suspects.k,
            "generators": list(service.suspects.models),
            "models": sorted(service.models),
        }

    @app.get("/api/tasks")
    def tasks(expert: str, n: int = 6) -> dict:
        try:
            batch = service.next_batch(expert, n)
        except EdsError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"expert": expert, "tasks": [t.to_dict() for t in batch]}

    @app.post("/api/votes")
    def post_vote(payload: VoteIn) -> dict:
        try:
            snapshot = service.submit_vote(payload.expert, payload.pair_id, payload.label)
        except EdsError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"ok": True, "progress": snapshot.to_dict()}

    @app.get("/api/progress")
    def progress() -> dict:
        return service.progress().to_dict()

    @app.get("/api/pairs/{pair_id}")
    def pair_details(pair_id: str) -> dict:
        try:
            return service.pair_details(pair_id)
        except EdsError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/img/{item_id}")
    def image(item_id: str):
        try:
            path = service.image_path(item_id)
        except EdsError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if not path.is_file():
            raise HTTPException(status_code=404, detail=f"image file missing for {item_id!r}")
        return FileResponse(path)

    @app.post("/api/resolve")
    def resolve(payload: ResolveIn | None = None) -> dict:
        out = payload.out if payload is not None else None
        path, rows = service.resolve_to_file(out)
        return {"path": str(path), "rows": rows}

    @app.get("/api/metrics")
    def metrics(model: str, ks: str = "5,9") -> dict:
        try:
            k_list = [int(k) for k in ks.split(",") if k.strip()]
            return service.metrics_preview(model, ks=k_list)
        except (EvaluationError, ValidationError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app
