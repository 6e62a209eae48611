"""Annotation service tests: dispatch, durable votes, progress, HTTP layer."""

from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from eds.annotation import make_vote, read_labels, read_vote_log
from eds.corpus import Corpus, ScoreListModel
from eds.discovery import build_suspects_per_model, union_dedupe
from eds.errors import VoteError
from eds.service import DATA_DIR_ENV, AnnotationService, VoteStore, create_app

EXPERTS = ("e1", "e2", "e3")


def _corpus(images=()):
    return Corpus(
        items=("a", "b", "c", "d", "e"),
        queries=("a", "b"),
        image_paths=dict(images),
    )


def _suspects(corpus):
    g1 = ScoreListModel("g1", {
        "a": {"b": 3.0, "c": 2.0, "d": 1.0},
        "b": {"a": 3.0, "c": 2.0, "e": 1.0},
    })
    g2 = ScoreListModel("g2", {
        "a": {"b": 3.0, "e": 2.0, "c": 1.0},
        "b": {"d": 3.0, "a": 2.0, "c": 1.0},
    })
    return union_dedupe([build_suspects_per_model(g, corpus, 2) for g in [g1, g2]])


def _service(tmp_path, images=(), models=None, data_dir=None, image_root=None):
    corpus = _corpus(images)
    suspects = _suspects(corpus)
    store = VoteStore(tmp_path / "votes.jsonl", EXPERTS, valid_pairs=suspects.pair_keys())
    return AnnotationService(corpus, suspects, store, data_dir=data_dir,
                             image_root=image_root, models=models)


def _client(service, static_dir=None):
    return TestClient(create_app(service, static_dir=static_dir))


def test_pairs_are_sorted_suspect_order_with_index_ids(tmp_path):
    service = _service(tmp_path)
    assert service.pairs == (
        ("a", "b"), ("a", "c"), ("a", "e"), ("b", "a"), ("b", "c"), ("b", "d"),
    )
    assert service.pair_id_of(("b", "a")) == "3"
    assert service.pair_of("3") == ("b", "a")


def test_meta_reports_campaign_shape(tmp_path):
    probe = ScoreListModel("probe", {"a": {"b": 1.0}})
    client = _client(_service(tmp_path, models={"probe": probe}))
    meta = client.get("/api/meta").json()
    assert meta == {
        "experts": ["e1", "e2", "e3"],
        "total_pairs": 6,
        "k": 2,
        "generators": ["g1", "g2"],
        "models": ["probe"],
    }


def test_task_batch_is_deterministic_until_a_vote_lands(tmp_path):
    client = _client(_service(tmp_path))
    first = client.get("/api/tasks", params={"expert": "e1", "n": 4}).json()
    again = client.get("/api/tasks", params={"expert": "e1", "n": 4}).json()
    assert first == again
    assert [t["pair_id"] for t in first["tasks"]] == ["0", "1", "2", "3"]
    client.post("/api/votes", json={"pair_id": "0", "expert": "e1", "label": 1})
    after = client.get("/api/tasks", params={"expert": "e1", "n": 10}).json()
    assert [t["pair_id"] for t in after["tasks"]] == ["1", "2", "3", "4", "5"]


def test_tasks_prioritize_pairs_closest_to_full_review(tmp_path):
    client = _client(_service(tmp_path))
    client.post("/api/votes", json={"pair_id": "4", "expert": "e1", "label": 1})
    client.post("/api/votes", json={"pair_id": "4", "expert": "e2", "label": 0})
    client.post("/api/votes", json={"pair_id": "2", "expert": "e1", "label": 0})
    batch = client.get("/api/tasks", params={"expert": "e3", "n": 3}).json()["tasks"]
    # Two votes beat one vote beats none; index breaks ties.
    assert [t["pair_id"] for t in batch] == ["4", "2", "0"]


def test_vote_submission_reports_progress(tmp_path):
    client = _client(_service(tmp_path))
    body = client.post(
        "/api/votes", json={"pair_id": "1", "expert": "e2", "label": 1}
    ).json()
    assert body["ok"] is True
    progress = body["progress"]
    assert progress["total_pairs"] == 6
    assert progress["fully_reviewed"] == 0
    assert progress["per_expert_done"] == {"e1": 0, "e2": 1, "e3": 0}
    assert progress["p_k_defined"] is False
    assert progress["running_p_k"] == 0.0


def test_progress_counts_majorities_over_fully_reviewed_pairs(tmp_path):
    service = _service(tmp_path)
    for expert, label in [("e1", 1), ("e2", 1), ("e3", 0)]:
        service.submit_vote(expert, "0", label)
    for expert, label in [("e1", 0), ("e2", 0), ("e3", 1)]:
        service.submit_vote(expert, "1", label)
    service.submit_vote("e1", "2", 1)
    snap = service.progress()
    assert snap.fully_reviewed == 2
    assert snap.positives_so_far == 1
    assert snap.running_p_k == 0.5
    assert snap.p_k_defined is True
    assert snap.per_expert_done == {"e1": 3, "e2": 2, "e3": 2}


def test_revote_supersedes_but_log_keeps_history(tmp_path):
    service = _service(tmp_path)
    for expert in EXPERTS:
        service.submit_vote(expert, "0", 1)
    service.submit_vote("e1", "0", 0)
    service.submit_vote("e2", "0", 0)
    assert len(read_vote_log(tmp_path / "votes.jsonl")) == 5
    snap = service.progress()
    assert snap.fully_reviewed == 1
    assert snap.positives_so_far == 0


def test_http_layer_rejects_bad_requests(tmp_path):
    client = _client(_service(tmp_path))
    assert client.get("/api/tasks", params={"expert": "ghost"}).status_code == 400
    assert client.post(
        "/api/votes", json={"pair_id": "99", "expert": "e1", "label": 1}
    ).status_code == 400
    assert client.post(
        "/api/votes", json={"pair_id": "0", "expert": "e1", "label": 7}
    ).status_code == 400
    assert client.post(
        "/api/votes", json={"pair_id": "0", "expert": "ghost", "label": 1}
    ).status_code == 400


def test_store_rejects_votes_outside_the_review_pool(tmp_path):
    service = _service(tmp_path)
    with pytest.raises(VoteError, match="not under review"):
        service.store.append(make_vote("a", "d", "e1", 1))


def test_pair_details_exposes_provenance_and_vote_state(tmp_path):
    client = _client(_service(tmp_path))
    client.post("/api/votes", json={"pair_id": "3", "expert": "e2", "label": 1})
    body = client.get("/api/pairs/3").json()
    assert body["query"] == "b"
    assert body["candidate"] == "a"
    assert body["proposers"] == [{"m": "g1", "r": 0}, {"m": "g2", "r": 1}]
    assert body["votes"] == 1
    assert body["experts_voted"] == ["e2"]
    assert client.get("/api/pairs/42").status_code == 404


def test_image_endpoint_serves_registered_files(tmp_path):
    (tmp_path / "imgs").mkdir()
    (tmp_path / "imgs" / "a.png").write_bytes(b"not really a png")
    service = _service(
        tmp_path,
        images=[("a", "a.png"), ("b", "b.png")],
        image_root=tmp_path / "imgs",
    )
    client = _client(service)
    got = client.get("/img/a")
    assert got.status_code == 200
    assert got.content == b"not really a png"
    assert client.get("/img/b").status_code == 404  # registered, file missing
    assert client.get("/img/c").status_code == 404  # never registered
    tasks = client.get("/api/tasks", params={"expert": "e1", "n": 1}).json()["tasks"]
    assert tasks[0]["query_image"] == "/img/a"
    assert tasks[0]["candidate_image"] == "/img/b"


def test_resolve_endpoint_writes_majority_labels(tmp_path):
    service = _service(tmp_path)
    for expert in ("e1", "e2"):
        service.submit_vote(expert, "0", 1)
    service.submit_vote("e3", "0", 0)
    service.submit_vote("e1", "5", 0)
    client = _client(service)
    body = client.post("/api/resolve", json={"out": str(tmp_path / "out.tsv")}).json()
    assert body["rows"] == 2
    labels = read_labels(tmp_path / "out.tsv")
    assert labels == {("a", "b"): 1, ("b", "d"): 0}


def test_resolve_defaults_into_the_data_dir(tmp_path):
    service = _service(tmp_path, data_dir=tmp_path / "campaign")
    service.submit_vote("e1", "0", 1)
    path, rows = service.resolve_to_file()
    assert path == tmp_path / "campaign" / "labels.tsv"
    assert rows == 1
    assert path.is_file()


def test_data_dir_env_var_wins(tmp_path, monkeypatch):
    monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path / "from-env"))
    service = _service(tmp_path, data_dir=tmp_path / "ignored")
    assert service.data_dir == tmp_path / "from-env"


def test_metrics_preview_runs_on_resolved_votes(tmp_path):
    probe = ScoreListModel("probe", {
        "a": {"b": 5.0, "c": 4.0, "d": 3.0, "e": 2.0},
        "b": {"a": 5.0, "c": 4.0, "d": 3.0, "e": 2.0},
    })
    service = _service(tmp_path, models={"probe": probe})
    client = _client(service)
    # No labeled positives yet: preview is a client error, not a crash.
    assert client.get("/api/metrics", params={"model": "probe"}).status_code == 400
    for expert in ("e1", "e2"):
        client.post("/api/votes", json={"pair_id": "0", "expert": expert, "label": 1})
    client.post("/api/votes", json={"pair_id": "1", "expert": "e1", "label": 0})
    body = client.get("/api/metrics", params={"model": "probe", "ks": "1,2"}).json()
    assert body["model"] == "probe"
    assert body["hr"]["1"] == 1.0
    assert body["mrr"]["1"] == 1.0
    assert body["roc_auc_micro"] == 1.0
    assert client.get("/api/metrics", params={"model": "nope"}).status_code == 400
    assert client.get(
        "/api/metrics", params={"model": "probe", "ks": "x"}
    ).status_code == 400


def test_restart_replays_the_vote_log_exactly(tmp_path):
    service = _service(tmp_path)
    votes = [("e1", "0", 1), ("e2", "0", 1), ("e3", "0", 0),
             ("e1", "3", 0), ("e2", "3", 0), ("e1", "3", 1),
             ("e2", "5", 1)]
    for expert, pair_id, label in votes:
        service.submit_vote(expert, pair_id, label)
    before = service.progress()
    service.store.close()

    corpus = _corpus()
    suspects = _suspects(corpus)
    store = VoteStore(tmp_path / "votes.jsonl", EXPERTS, valid_pairs=suspects.pair_keys())
    revived = AnnotationService(corpus, suspects, store)
    assert revived.progress() == before
    # The revived store keeps appending to the same log.
    revived.submit_vote("e3", "5", 1)
    assert revived.progress().per_expert_done["e3"] == 2


def test_static_ui_mount_is_optional(tmp_path):
    service = _service(tmp_path)
    bare = _client(service)
    assert bare.get("/").status_code == 404

    ui = tmp_path / "ui"
    ui.mkdir()
    (ui / "index.html").write_text("<h1>review queue</h1>", encoding="utf-8")
    mounted = _client(service, static_dir=ui)
    got = mounted.get("/")
    assert got.status_code == 200
    assert "review queue" in got.text
    # API routes still win over the static mount.
    assert mounted.get("/api/progress").status_code == 200
