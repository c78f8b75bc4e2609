"""HTTP service tying the loop together.

Endpoints (all under ``/v1``, bearer auth, JSON bodies):

- ``POST /v1/inquiries`` runs the active pipeline and queues a draft.
- ``GET /v1/drafts`` pages the review queue, newest first.
- ``POST /v1/drafts/{id}/rating`` records a staff 0/1/2 judgment.
- ``POST /v1/drafts/{id}/sent`` marks a rated draft as sent.
- ``POST /v1/kb/documents`` upserts a document and schedules a re-index.
- ``GET /v1/kb/status`` reports knowledge-base revision vs index watermark.
- ``GET /v1/metrics/report`` serves the latest evaluation report.
- ``GET /v1/metrics/kappa`` computes agreement over the configured rater pair.
- ``GET /healthz`` (no auth).

State is kept in memory and persisted through append-only checksummed event
logs under the storage root, replayed and compacted on startup, so a restart
reconstructs the identical queue. The vector index is immutable; a background
worker rebuilds it after knowledge-base changes and publishes it by atomic
reference swap, so in-flight drafts keep the snapshot they started with.
"""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, Response

from .chunking import ChunkingParams
from .config import AppConfig
from .corpus import Document, KnowledgeBase
from .errors import EmbeddingError, GenerationError, IngestionError
from .evaluation import EvaluationReport, ReviewRating, cohens_kappa
from .generation import (
    Draft,
    GenerationParams,
    PipelineConfig,
    RemoteGenerationClient,
    ScriptedGenerationClient,
    run_pipeline,
)
from .retrieval import ReferenceEmbeddingProvider, RemoteEmbeddingProvider, VectorIndex, rebuild_index
from .storage import EventLog

logger = logging.getLogger(__name__)

MAX_INQUIRY_CHARS = 8_000
STATUSES = ("pending_review", "rated", "sent")


class DraftStore:
    """Drafts and ratings backed by append-only event logs."""

    def __init__(self, root: Path) -> None:
        self._lock = threading.RLock()
        self._drafts: dict[str, Draft] = {}
        self._seq: dict[str, int] = {}
        self._ratings: dict[tuple[str, str], ReviewRating] = {}
        self._next_seq = 1
        self._draft_log = EventLog(root / "drafts.log")
        self._rating_log = EventLog(root / "ratings.log")
        self._replay()

    def _replay(self) -> None:
        for record in self._draft_log.read():
            if record.get("kind") == "draft":
                draft = Draft.from_json(record["draft"])
                self._drafts[draft.draft_id] = draft
                self._seq[draft.draft_id] = record["seq"]
                self._next_seq = max(self._next_seq, record["seq"] + 1)
            elif record.get("kind") == "status":
                draft = self._drafts.get(record["draft_id"])
                if draft is not None:
                    draft.status = record["status"]
        for record in self._rating_log.read():
            rating = ReviewRating(
                draft_id=record["draft_id"],
                rater_id=record["rater_id"],
                score=int(record["score"]),
                edited_text=record.get("edited_text"),
            )
            self._ratings[(rating.draft_id, rating.rater_id)] = rating
        # Compact: one record per draft with its final status, ratings as-is.
        self._draft_log.compact(
            [
                {"kind": "draft", "seq": self._seq[d.draft_id], "draft": d.to_json()}
                for d in sorted(self._drafts.values(), key=lambda d: self._seq[d.draft_id])
            ]
        )
        self._rating_log.compact([self._rating_record(r) for r in self._ratings_ordered()])

    @staticmethod
    def _rating_record(rating: ReviewRating) -> dict:
        record = {"draft_id": rating.draft_id, "rater_id": rating.rater_id, "score": rating.score}
        if rating.edited_text is not None:
            record["edited_text"] = rating.edited_text
        return record

    def _ratings_ordered(self) -> list[ReviewRating]:
        return [
            self._ratings[key]
            for key in sorted(self._ratings, key=lambda k: (self._seq.get(k[0], 0), k[0], k[1]))
        ]

    def add_draft(self, draft: Draft) -> None:
        with self._lock:
            seq = self._next_seq
            self._next_seq += 1
            self._drafts[draft.draft_id] = draft
            self._seq[draft.draft_id] = seq
            self._draft_log.append({"kind": "draft", "seq": seq, "draft": draft.to_json()})

    def get(self, draft_id: str) -> Draft | None:
        with self._lock:
            return self._drafts.get(draft_id)

    def list_drafts(self, status: str | None, limit: int, cursor: int | None) -> tuple[list[tuple[int, Draft]], int | None]:
        """Newest-first page of (seq, draft); next_cursor is None when exhausted."""
        with self._lock:
            items = sorted(
                ((seq, self._drafts[d_id]) for d_id, seq in self._seq.items()),
                key=lambda pair: -pair[0],
            )
        if status is not None:
            items = [(seq, d) for seq, d in items if d.status == status]
        if cursor is not None:
            items = [(seq, d) for seq, d in items if seq < cursor]
        page = items[:limit]
        next_cursor = page[-1][0] if len(items) > limit else None
        return page, next_cursor

    def add_rating(self, rating: ReviewRating) -> None:
        """Raises KeyError for unknown draft, ValueError for a duplicate rater."""
        with self._lock:
            draft = self._drafts.get(rating.draft_id)
            if draft is None:
                raise KeyError(rating.draft_id)
            key = (rating.draft_id, rating.rater_id)
            if key in self._ratings:
                raise ValueError(f"rater {rating.rater_id} already rated draft {rating.draft_id}")
            self._ratings[key] = rating
            self._rating_log.append(self._rating_record(rating))
            if draft.status == "pending_review":
                draft.status = "rated"
                self._draft_log.append({"kind": "status", "draft_id": draft.draft_id, "status": "rated"})

    def mark_sent(self, draft_id: str) -> None:
        with self._lock:
            draft = self._drafts.get(draft_id)
            if draft is None:
                raise KeyError(draft_id)
            if draft.status != "rated":
                raise ValueError(f"draft {draft_id} is {draft.status}; only rated drafts can be sent")
            draft.status = "sent"
            self._draft_log.append({"kind": "status", "draft_id": draft_id, "status": "sent"})

    def rating_pairs(self, rater_a: str, rater_b: str) -> tuple[list[int], list[int]]:
        """Aligned score lists over drafts rated by both configured raters."""
        with self._lock:
            scores_a, scores_b = [], []
            for draft_id in sorted(self._drafts, key=lambda d: self._seq[d]):
                a = self._ratings.get((draft_id, rater_a))
                b = self._ratings.get((draft_id, rater_b))
                if a is not None and b is not None:
                    scores_a.append(a.score)
                    scores_b.append(b.score)
            return scores_a, scores_b


class Engine:
    """Wires the knowledge base, index, providers, and clients for the service."""

    def __init__(
        self,
        config: AppConfig,
        provider=None,
        client=None,
    ) -> None:
        self.config = config
        self.root = Path(config.storage_root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.params = ChunkingParams(chunk_size=config.chunk_size, overlap=config.overlap)
        self.pipeline = PipelineConfig.for_name(
            config.active_config,
            base_model_id=config.base_model_id,
            finetuned_model_id=config.finetuned_model_id,
            top_k=config.top_k,
        )
        self.provider = provider or self._build_provider()
        self.client = client or self._build_client()
        self.gen_params = GenerationParams(max_tokens=config.max_tokens, temperature=config.temperature)

        self._kb_lock = threading.RLock()
        self.kb_path = self.root / "kb.jsonl"
        self.kb = KnowledgeBase.load(self.kb_path) if self.kb_path.exists() else KnowledgeBase()
        self.store = DraftStore(self.root)

        self.index: VectorIndex = rebuild_index(self.kb, self.params, self.provider)
        self._rebuild_wanted = threading.Event()
        self._stop = threading.Event()
        self._worker = threading.Thread(target=self._rebuild_loop, name="index-rebuild", daemon=True)
        self._worker.start()

    def _build_provider(self):
        if self.config.embedding_provider == "remote":
            return RemoteEmbeddingProvider(
                endpoint=self.config.embed_endpoint or None,
                api_key=self.config.embed_api_key or None,
                dim=self.config.embed_dim,
            )
        return ReferenceEmbeddingProvider(dim=self.config.embed_dim)

    def _build_client(self):
        if self.config.generator == "scripted":
            default = self.config.script_default or None
            if self.config.script_path:
                return ScriptedGenerationClient.from_file(self.config.script_path, default=default)
            return ScriptedGenerationClient(default=default)
        finetuned = self.pipeline.name in ("finetuned_only", "finetuned_rag")
        endpoint = self.config.gen_endpoint_finetuned if finetuned else self.config.gen_endpoint_base
        return RemoteGenerationClient(
            endpoint=endpoint,
            model_id=self.pipeline.model_id,
            api_key=self.config.gen_api_key or None,
        )

    def close(self) -> None:
        self._stop.set()
        self._rebuild_wanted.set()
        self._worker.join(timeout=5)

    def _rebuild_loop(self) -> None:
        while not self._stop.is_set():
            self._rebuild_wanted.wait()
            if self._stop.is_set():
                return
            self._rebuild_wanted.clear()
            try:
                with self._kb_lock:
                    snapshot = self.kb.snapshot()
                new_index = rebuild_index(snapshot, self.params, self.provider)
                self.index = new_index  # atomic publish
                logger.info("published index watermark=%d entries=%d", new_index.kb_revision_watermark, len(new_index))
            except Exception:
                logger.exception("index rebuild failed; keeping previous index")

    def submit_inquiry(self, text: str, channel: str = "") -> Draft:
        index = self.index  # snapshot for this draft
        draft = run_pipeline(
            self.pipeline,
            text,
            index,
            self.provider,
            self.client,
            params=self.gen_params,
            channel=channel,
            excerpt_chars=self.config.excerpt_chars,
        )
        self.store.add_draft(draft)
        return draft

    def upsert_kb_document(self, doc: Document) -> int:
        with self._kb_lock:
            revision = self.kb.upsert_document(doc)
            self.kb.save(self.kb_path)
        self._rebuild_wanted.set()
        return revision

    def kb_status(self) -> dict:
        return {"kb_revision": self.kb.revision, "index_watermark": self.index.kb_revision_watermark}


def _queue_item(seq: int, draft: Draft) -> dict:
    return {
        "draft_id": draft.draft_id,
        "status": draft.status,
        "created_at": draft.created_at,
        "config": draft.config_name,
        "inquiry": {"inquiry_id": draft.inquiry_id, "text": draft.inquiry_text, "channel": draft.channel},
        "response": draft.response_text,
        "citations": [c.to_json() for c in draft.citations],
        "seq": seq,
    }


def create_app(config: AppConfig, engine: Engine | None = None) -> FastAPI:
    app = FastAPI(title="admissions inquiry service", version="0.1.0")
    engine = engine or Engine(config)
    app.state.engine = engine

    async def require_auth(request: Request) -> None:
        header = request.headers.get("authorization", "")
        if header != f"Bearer {config.api_token}":
            raise HTTPException(status_code=401, detail="invalid bearer token")

    @app.get("/healthz")
    async def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/v1/inquiries", dependencies=[Depends(require_auth)], status_code=201)
    async def post_inquiry(request: Request) -> JSONResponse:
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise HTTPException(status_code=400, detail="body must be JSON")
        text = body.get("text", "") if isinstance(body, dict) else ""
        channel = body.get("channel", "") if isinstance(body, dict) else ""
        if not isinstance(text, str) or not text.strip():
            raise HTTPException(status_code=400, detail="text must be a non-empty string")
        if len(text) > MAX_INQUIRY_CHARS:
            raise HTTPException(status_code=400, detail=f"text exceeds {MAX_INQUIRY_CHARS} characters")
        try:
            draft = engine.submit_inquiry(text, channel=str(channel or ""))
        except (GenerationError, EmbeddingError) as exc:
            raise HTTPException(status_code=503, detail=f"generation backend unavailable: {exc}")
        return JSONResponse(
            status_code=201,
            content={
                "draft_id": draft.draft_id,
                "response": draft.response_text,
                "citations": [c.to_json() for c in draft.citations],
                "config": draft.config_name,
            },
        )

    @app.get("/v1/drafts", dependencies=[Depends(require_auth)])
    async def get_drafts(
        status: str | None = "pending_review",
        limit: int = 50,
        cursor: int | None = None,
    ) -> dict:
        if status is not None and status not in STATUSES:
            raise HTTPException(status_code=400, detail=f"unknown status {status!r}")
        if not 1 <= limit <= 500:
            raise HTTPException(status_code=400, detail="limit must be in [1, 500]")
        page, next_cursor = engine.store.list_drafts(status, limit, cursor)
        return {"items": [_queue_item(seq, d) for seq, d in page], "next_cursor": next_cursor}

    @app.post("/v1/drafts/{draft_id}/rating", dependencies=[Depends(require_auth)], status_code=204)
    async def post_rating(draft_id: str, request: Request) -> Response:
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise HTTPException(status_code=400, detail="body must be JSON")
        if not isinstance(body, dict):
            raise HTTPException(status_code=400, detail="body must be a rating object")
        rater_id = body.get("rater_id")
        score = body.get("score")
        if not rater_id or not isinstance(rater_id, str):
            raise HTTPException(status_code=422, detail="rater_id required")
        if not isinstance(score, int) or isinstance(score, bool) or score not in (0, 1, 2):
            raise HTTPException(status_code=422, detail="score must be 0, 1, or 2")
        edited_text = body.get("edited_text")
        if edited_text is not None and not isinstance(edited_text, str):
            raise HTTPException(status_code=422, detail="edited_text must be a string")
        rating = ReviewRating(draft_id=draft_id, rater_id=rater_id, score=score, edited_text=edited_text)
        try:
            engine.store.add_rating(rating)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown draft {draft_id}")
        except ValueError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return Response(status_code=204)

    @app.post("/v1/drafts/{draft_id}/sent", dependencies=[Depends(require_auth)], status_code=204)
    async def post_sent(draft_id: str) -> Response:
        try:
            engine.store.mark_sent(draft_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown draft {draft_id}")
        except ValueError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return Response(status_code=204)

    @app.post("/v1/kb/documents", dependencies=[Depends(require_auth)], status_code=202)
    async def post_kb_document(request: Request) -> JSONResponse:
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise HTTPException(status_code=400, detail="body must be JSON")
        if not isinstance(body, dict):
            raise HTTPException(status_code=400, detail="body must be a document object")
        metadata = body.get("metadata") or {}
        if not isinstance(metadata, dict):
            raise HTTPException(status_code=400, detail="metadata must be an object")
        text = body.get("text", "")
        if not isinstance(text, str):
            raise HTTPException(status_code=400, detail="text must be a string")
        try:
            doc = Document(
                doc_id=str(body.get("doc_id", "")),
                source_kind=str(body.get("source_kind", "")),
                title=str(body.get("title", "")),
                text=text,
                metadata={str(k): str(v) for k, v in metadata.items()},
            )
            revision = engine.upsert_kb_document(doc)
        except IngestionError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return JSONResponse(status_code=202, content={"revision": revision})

    @app.get("/v1/kb/status", dependencies=[Depends(require_auth)])
    async def kb_status() -> dict:
        return engine.kb_status()

    @app.get("/v1/metrics/report", dependencies=[Depends(require_auth)])
    async def metrics_report() -> dict:
        report_path = engine.root / "report.json"
        if not report_path.exists():
            raise HTTPException(status_code=404, detail="no evaluation report published")
        report = EvaluationReport.from_json(json.loads(report_path.read_text(encoding="utf-8")))
        return report.to_json()

    @app.get("/v1/metrics/kappa", dependencies=[Depends(require_auth)])
    async def metrics_kappa() -> dict:
        rater_a, rater_b = engine.config.kappa_raters[0], engine.config.kappa_raters[1]
        scores_a, scores_b = engine.store.rating_pairs(rater_a, rater_b)
        if len(scores_a) < 2:
            raise HTTPException(status_code=409, detail="insufficient ratings")
        return {"kappa": cohens_kappa(scores_a, scores_b), "n": len(scores_a)}

    return app
