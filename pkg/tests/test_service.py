from __future__ import annotations

import json
import time

import pytest
from fastapi.testclient import TestClient

from admitrag.config import AppConfig
from admitrag.corpus import KnowledgeBase
from admitrag.evaluation import MetricRow, build_report
from admitrag.generation import ScriptedGenerationClient
from admitrag.retrieval import ReferenceEmbeddingProvider
from admitrag.service import Engine, create_app
from conftest import make_doc

TOKEN = "test-token"
AUTH = {"Authorization": f"Bearer {TOKEN}"}

KB_TEXTS = {
    "deadlines": "The undergraduate application deadline is 25.07.2025 for all programs.",
    "tuition": "Annual tuition for the computer science program is 420000 rubles.",
    "dorms": "Dormitory placement is guaranteed for first-year students from other cities.",
    "visas": "International applicants receive a visa invitation letter within two weeks.",
}


def seed_kb(root) -> None:
    kb = KnowledgeBase("service-kb")
    for doc_id in sorted(KB_TEXTS):
        kb.upsert_document(make_doc(doc_id, KB_TEXTS[doc_id]))
    kb.save(root / "kb.jsonl")


def make_engine(root, client=None) -> Engine:
    config = AppConfig(storage_root=str(root), api_token=TOKEN, active_config="finetuned_rag")
    return Engine(
        config,
        provider=ReferenceEmbeddingProvider(),
        client=client or ScriptedGenerationClient(default="Thank you for your inquiry. See the cited sources."),
    )


@pytest.fixture
def service(tmp_path):
    seed_kb(tmp_path)
    engine = make_engine(tmp_path)
    app = create_app(engine.config, engine=engine)
    with TestClient(app) as client:
        yield client, engine
    engine.close()


def post_inquiry(client, text="When is the undergraduate application deadline?"):
    return client.post("/v1/inquiries", json={"text": text, "channel": "email"}, headers=AUTH)


class TestAuthAndHealth:
    def test_healthz_no_auth(self, service):
        client, _ = service
        resp = client.get("/healthz")
        assert resp.status_code == 200
        assert resp.json() == {"status": "ok"}

    def test_wrong_token_401(self, service):
        client, _ = service
        resp = client.post("/v1/inquiries", json={"text": "hi"}, headers={"Authorization": "Bearer nope"})
        assert resp.status_code == 401

    def test_missing_token_401(self, service):
        client, _ = service
        assert client.get("/v1/drafts").status_code == 401


class TestInquiries:
    def test_valid_inquiry_201_with_three_citations(self, service):
        client, _ = service
        resp = post_inquiry(client)
        assert resp.status_code == 201
        body = resp.json()
        assert body["config"] == "finetuned_rag"
        assert len(body["citations"]) == 3
        assert body["citations"][0]["chunk_id"] == "deadlines#0"
        assert body["response"]
        assert body["draft_id"]

    def test_empty_text_400(self, service):
        client, _ = service
        assert client.post("/v1/inquiries", json={"text": "  "}, headers=AUTH).status_code == 400

    def test_oversize_400(self, service):
        client, _ = service
        resp = client.post("/v1/inquiries", json={"text": "x" * 8001}, headers=AUTH)
        assert resp.status_code == 400

    def test_malformed_body_400(self, service):
        client, _ = service
        resp = client.post("/v1/inquiries", content=b"not json", headers={**AUTH, "Content-Type": "application/json"})
        assert resp.status_code == 400

    def test_generation_backend_unavailable_503(self, tmp_path):
        seed_kb(tmp_path)
        engine = make_engine(tmp_path, client=ScriptedGenerationClient())  # nothing scripted
        app = create_app(engine.config, engine=engine)
        with TestClient(app) as client:
            assert post_inquiry(client).status_code == 503
            # failed drafts are not persisted
            assert client.get("/v1/drafts", headers=AUTH).json()["items"] == []
        engine.close()


class TestQueue:
    def test_empty_store(self, service):
        client, _ = service
        body = client.get("/v1/drafts", headers=AUTH).json()
        assert body == {"items": [], "next_cursor": None}

    def test_one_item_after_inquiry(self, service):
        client, _ = service
        draft_id = post_inquiry(client).json()["draft_id"]
        items = client.get("/v1/drafts", headers=AUTH).json()["items"]
        assert len(items) == 1
        item = items[0]
        assert item["draft_id"] == draft_id
        assert item["status"] == "pending_review"
        assert item["inquiry"]["text"].startswith("When is")
        assert item["inquiry"]["channel"] == "email"
        assert len(item["citations"]) == 3
        assert item["citations"][0]["excerpt"]

    def test_newest_first_and_pagination(self, service):
        client, _ = service
        ids = [post_inquiry(client, f"inquiry number {i} about deadline").json()["draft_id"] for i in range(5)]
        page1 = client.get("/v1/drafts?limit=2", headers=AUTH).json()
        assert [i["draft_id"] for i in page1["items"]] == [ids[4], ids[3]]
        assert page1["next_cursor"] is not None
        page2 = client.get(f"/v1/drafts?limit=2&cursor={page1['next_cursor']}", headers=AUTH).json()
        assert [i["draft_id"] for i in page2["items"]] == [ids[2], ids[1]]
        page3 = client.get(f"/v1/drafts?limit=2&cursor={page2['next_cursor']}", headers=AUTH).json()
        assert [i["draft_id"] for i in page3["items"]] == [ids[0]]
        assert page3["next_cursor"] is None

    def test_unknown_status_400(self, service):
        client, _ = service
        assert client.get("/v1/drafts?status=weird", headers=AUTH).status_code == 400


class TestRatings:
    def test_invalid_score_422(self, service):
        client, _ = service
        draft_id = post_inquiry(client).json()["draft_id"]
        resp = client.post(f"/v1/drafts/{draft_id}/rating", json={"rater_id": "a", "score": 3}, headers=AUTH)
        assert resp.status_code == 422

    def test_unknown_draft_404(self, service):
        client, _ = service
        resp = client.post("/v1/drafts/nope/rating", json={"rater_id": "a", "score": 1}, headers=AUTH)
        assert resp.status_code == 404

    def test_non_object_body_400(self, service):
        client, _ = service
        draft_id = post_inquiry(client).json()["draft_id"]
        resp = client.post(f"/v1/drafts/{draft_id}/rating", json="just a string", headers=AUTH)
        assert resp.status_code == 400

    def test_valid_rating_leaves_pending_queue(self, service):
        client, _ = service
        draft_id = post_inquiry(client).json()["draft_id"]
        resp = client.post(
            f"/v1/drafts/{draft_id}/rating",
            json={"rater_id": "a", "score": 1, "edited_text": "Fixed response."},
            headers=AUTH,
        )
        assert resp.status_code == 204
        assert client.get("/v1/drafts", headers=AUTH).json()["items"] == []
        rated = client.get("/v1/drafts?status=rated", headers=AUTH).json()["items"]
        assert [i["draft_id"] for i in rated] == [draft_id]

    def test_duplicate_rater_409(self, service):
        client, _ = service
        draft_id = post_inquiry(client).json()["draft_id"]
        payload = {"rater_id": "a", "score": 2}
        assert client.post(f"/v1/drafts/{draft_id}/rating", json=payload, headers=AUTH).status_code == 204
        assert client.post(f"/v1/drafts/{draft_id}/rating", json=payload, headers=AUTH).status_code == 409

    def test_second_rater_allowed(self, service):
        client, _ = service
        draft_id = post_inquiry(client).json()["draft_id"]
        assert client.post(f"/v1/drafts/{draft_id}/rating", json={"rater_id": "a", "score": 2}, headers=AUTH).status_code == 204
        assert client.post(f"/v1/drafts/{draft_id}/rating", json={"rater_id": "b", "score": 1}, headers=AUTH).status_code == 204

    def test_sent_transition(self, service):
        client, _ = service
        draft_id = post_inquiry(client).json()["draft_id"]
        # pending -> sent is not allowed
        assert client.post(f"/v1/drafts/{draft_id}/sent", headers=AUTH).status_code == 409
        client.post(f"/v1/drafts/{draft_id}/rating", json={"rater_id": "a", "score": 2}, headers=AUTH)
        assert client.post(f"/v1/drafts/{draft_id}/sent", headers=AUTH).status_code == 204
        sent = client.get("/v1/drafts?status=sent", headers=AUTH).json()["items"]
        assert [i["draft_id"] for i in sent] == [draft_id]


def wait_for_watermark(client, revision: int, timeout: float = 10.0) -> dict:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        status = client.get("/v1/kb/status", headers=AUTH).json()
        if status["index_watermark"] >= revision:
            return status
        time.sleep(0.05)
    raise AssertionError(f"index watermark never reached {revision}")


class TestKnowledgeBaseEndpoints:
    def test_upsert_and_watermark_convergence(self, service):
        client, engine = service
        start_revision = engine.kb.revision
        resp = client.post(
            "/v1/kb/documents",
            json={
                "doc_id": "scholarships",
                "source_kind": "webpage",
                "title": "Scholarships",
                "text": "Merit scholarships cover full tuition for olympiad winners.",
            },
            headers=AUTH,
        )
        assert resp.status_code == 202
        assert resp.json() == {"revision": 1}
        status = wait_for_watermark(client, start_revision + 1)
        assert status["kb_revision"] == start_revision + 1
        # new doc becomes retrievable
        resp = post_inquiry(client, "Do merit scholarships cover tuition for olympiad winners?")
        assert resp.json()["citations"][0]["chunk_id"] == "scholarships#0"

    def test_upsert_same_doc_bumps_revision(self, service):
        client, _ = service
        body = {
            "doc_id": "x",
            "source_kind": "faq",
            "title": "x",
            "text": "first version",
        }
        assert client.post("/v1/kb/documents", json=body, headers=AUTH).json() == {"revision": 1}
        body["text"] = "second version"
        assert client.post("/v1/kb/documents", json=body, headers=AUTH).json() == {"revision": 2}

    def test_malformed_document_400(self, service):
        client, _ = service
        resp = client.post("/v1/kb/documents", json={"doc_id": "", "text": "x"}, headers=AUTH)
        assert resp.status_code == 400
        resp = client.post("/v1/kb/documents", json={"doc_id": "d", "source_kind": "faq", "text": "  "}, headers=AUTH)
        assert resp.status_code == 400


class TestMetricsEndpoints:
    def test_kappa_insufficient_409(self, service):
        client, _ = service
        assert client.get("/v1/metrics/kappa", headers=AUTH).status_code == 409

    def test_kappa_perfect_agreement(self, service):
        client, _ = service
        for i in range(3):
            draft_id = post_inquiry(client, f"question {i} about the deadline").json()["draft_id"]
            client.post(f"/v1/drafts/{draft_id}/rating", json={"rater_id": "rater_a", "score": i % 3}, headers=AUTH)
            client.post(f"/v1/drafts/{draft_id}/rating", json={"rater_id": "rater_b", "score": i % 3}, headers=AUTH)
        body = client.get("/v1/metrics/kappa", headers=AUTH).json()
        assert body == {"kappa": 1.0, "n": 3}

    def test_kappa_worked_fixture(self, service):
        client, _ = service
        a = [2, 2, 2, 2, 1, 1, 1, 0, 0, 0]
        b = [2, 2, 2, 1, 1, 1, 0, 0, 0, 0]
        for i, (sa, sb) in enumerate(zip(a, b)):
            draft_id = post_inquiry(client, f"kappa fixture inquiry {i}").json()["draft_id"]
            client.post(f"/v1/drafts/{draft_id}/rating", json={"rater_id": "rater_a", "score": sa}, headers=AUTH)
            client.post(f"/v1/drafts/{draft_id}/rating", json={"rater_id": "rater_b", "score": sb}, headers=AUTH)
        body = client.get("/v1/metrics/kappa", headers=AUTH).json()
        assert body["n"] == 10
        assert body["kappa"] == pytest.approx(0.7015, abs=1e-4)

    def test_report_404_then_served(self, service, tmp_path):
        client, engine = service
        assert client.get("/v1/metrics/report", headers=AUTH).status_code == 404
        report = build_report({"baseline": MetricRow(10.0, 20.0, 5.0)})
        (engine.root / "report.json").write_text(json.dumps(report.to_json()), encoding="utf-8")
        body = client.get("/v1/metrics/report", headers=AUTH).json()
        assert body["rows"]["baseline"]["fact_recall_pct"] == 10.0


class TestRestart:
    def test_queue_state_identical_after_restart(self, tmp_path):
        seed_kb(tmp_path)
        engine = make_engine(tmp_path)
        app = create_app(engine.config, engine=engine)
        with TestClient(app) as client:
            d1 = post_inquiry(client, "first question about the deadline").json()["draft_id"]
            d2 = post_inquiry(client, "second question about tuition fees").json()["draft_id"]
            post_inquiry(client, "third question about dormitory rooms")
            client.post(f"/v1/drafts/{d1}/rating", json={"rater_id": "a", "score": 1, "edited_text": "e"}, headers=AUTH)
            client.post(f"/v1/drafts/{d2}/rating", json={"rater_id": "a", "score": 2}, headers=AUTH)
            client.post(f"/v1/drafts/{d2}/sent", headers=AUTH)
            before_pending = client.get("/v1/drafts", headers=AUTH).json()
            before_all = {
                status: client.get(f"/v1/drafts?status={status}", headers=AUTH).json()
                for status in ("pending_review", "rated", "sent")
            }
        engine.close()

        engine2 = make_engine(tmp_path)
        app2 = create_app(engine2.config, engine=engine2)
        with TestClient(app2) as client:
            after_pending = client.get("/v1/drafts", headers=AUTH).json()
            after_all = {
                status: client.get(f"/v1/drafts?status={status}", headers=AUTH).json()
                for status in ("pending_review", "rated", "sent")
            }
        engine2.close()
        assert after_pending == before_pending
        assert after_all == before_all

    def test_ratings_survive_restart(self, tmp_path):
        seed_kb(tmp_path)
        engine = make_engine(tmp_path)
        app = create_app(engine.config, engine=engine)
        with TestClient(app) as client:
            draft_id = post_inquiry(client).json()["draft_id"]
            client.post(f"/v1/drafts/{draft_id}/rating", json={"rater_id": "a", "score": 2}, headers=AUTH)
        engine.close()

        engine2 = make_engine(tmp_path)
        app2 = create_app(engine2.config, engine=engine2)
        with TestClient(app2) as client:
            # duplicate still detected after restart
            resp = client.post(f"/v1/drafts/{draft_id}/rating", json={"rater_id": "a", "score": 2}, headers=AUTH)
            assert resp.status_code == 409
        engine2.close()
