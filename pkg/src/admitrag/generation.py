"""Prompt assembly and the four response-generation pipeline configurations.

Models are never hosted here: a pipeline talks to a generation client, either
a remote chat-completions-style HTTP endpoint or a scripted fixture client for
tests. The four configurations differ only in whether retrieval is enabled and
which model id the client is pointed at.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Protocol, Sequence

import requests

from .errors import GenerationError
from .retrieval import EmbeddingProvider, RetrievalHit, VectorIndex, search
from .retry import with_retries

PIPELINE_NAMES = ("baseline", "rag_only", "finetuned_only", "finetuned_rag")
RETRIEVAL_PIPELINES = frozenset({"rag_only", "finetuned_rag"})

RAG_TEMPLATE_ID = "rag-v1"
PLAIN_TEMPLATE_ID = "plain-v1"

_RAG_SYSTEM = (
    "SYSTEM: You are a university admissions assistant. Answer using ONLY the "
    "provided context. If the context does not contain the answer, say you "
    "cannot confirm it."
)
_PLAIN_SYSTEM = "SYSTEM: You are a university admissions assistant."

_SENTINELS = ("SYSTEM:", "QUESTION:", "ANSWER:")


@dataclass(frozen=True)
class GenerationParams:
    max_tokens: int = 512
    temperature: float = 0.2


@dataclass(frozen=True)
class PipelineConfig:
    """One of the four fixed response-generation configurations."""

    name: str
    retrieval_enabled: bool
    model_id: str
    top_k: int = 3
    prompt_template_id: str = ""

    def __post_init__(self) -> None:
        if self.name not in PIPELINE_NAMES:
            raise ValueError(f"unknown pipeline config {self.name!r}")
        if self.retrieval_enabled != (self.name in RETRIEVAL_PIPELINES):
            raise ValueError(f"config {self.name}: retrieval_enabled must be {self.name in RETRIEVAL_PIPELINES}")
        if not self.prompt_template_id:
            object.__setattr__(
                self, "prompt_template_id", RAG_TEMPLATE_ID if self.retrieval_enabled else PLAIN_TEMPLATE_ID
            )

    @classmethod
    def for_name(
        cls,
        name: str,
        base_model_id: str = "base",
        finetuned_model_id: str = "finetuned",
        top_k: int = 3,
    ) -> PipelineConfig:
        """Build a config from the fixed name -> (retrieval, model class) mapping."""
        if name not in PIPELINE_NAMES:
            raise ValueError(f"unknown pipeline config {name!r}")
        model_id = finetuned_model_id if name in ("finetuned_only", "finetuned_rag") else base_model_id
        return cls(
            name=name,
            retrieval_enabled=name in RETRIEVAL_PIPELINES,
            model_id=model_id,
            top_k=top_k,
        )


@dataclass(frozen=True)
class Citation:
    """A retrieval hit plus the chunk text excerpt captured at draft time."""

    chunk_id: str
    score: float
    rank: int
    excerpt: str

    def to_json(self) -> dict:
        return {"chunk_id": self.chunk_id, "score": self.score, "rank": self.rank, "excerpt": self.excerpt}

    @classmethod
    def from_json(cls, obj: dict) -> Citation:
        return cls(obj["chunk_id"], float(obj["score"]), int(obj["rank"]), obj["excerpt"])


@dataclass
class Draft:
    """A generated response waiting for staff review."""

    draft_id: str
    inquiry_id: str
    config_name: str
    response_text: str
    citations: list[Citation]
    created_at: str
    latency_ms: int
    status: str = "pending_review"
    inquiry_text: str = ""
    channel: str = ""

    def to_json(self) -> dict:
        return {
            "draft_id": self.draft_id,
            "inquiry_id": self.inquiry_id,
            "config_name": self.config_name,
            "response_text": self.response_text,
            "citations": [c.to_json() for c in self.citations],
            "created_at": self.created_at,
            "latency_ms": self.latency_ms,
            "status": self.status,
            "inquiry_text": self.inquiry_text,
            "channel": self.channel,
        }

    @classmethod
    def from_json(cls, obj: dict) -> Draft:
        return cls(
            draft_id=obj["draft_id"],
            inquiry_id=obj["inquiry_id"],
            config_name=obj["config_name"],
            response_text=obj["response_text"],
            citations=[Citation.from_json(c) for c in obj.get("citations", [])],
            created_at=obj["created_at"],
            latency_ms=int(obj.get("latency_ms", 0)),
            status=obj.get("status", "pending_review"),
            inquiry_text=obj.get("inquiry_text", ""),
            channel=obj.get("channel", ""),
        )


def inquiry_id_for(text: str) -> str:
    """Stable content-derived inquiry id, so fixtures can be keyed ahead of time."""
    return "inq-" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def _escape_block(text: str) -> str:
    """Prefix lines that would collide with a template sentinel."""
    lines = text.split("\n")
    return "\n".join("> " + line if line.startswith(_SENTINELS) else line for line in lines)


def assemble_prompt(
    inquiry: str,
    hits: Sequence[tuple[RetrievalHit, str]],
    template_id: str = RAG_TEMPLATE_ID,
) -> str:
    """Render the fixed, versioned prompt template.

    Chunk text and inquiry continuation lines are inserted verbatim except
    that lines beginning with a sentinel (SYSTEM:, QUESTION:, ANSWER:) are
    escaped with '> ' so each sentinel appears exactly once in the prompt.
    """
    if template_id == RAG_TEMPLATE_ID:
        lines = [_RAG_SYSTEM]
        if hits:
            lines.append("CONTEXT:")
            for hit, chunk_text in hits:
                lines.append(f"[{hit.rank}] (source: {hit.chunk_id}) {_escape_block(chunk_text)}")
    elif template_id == PLAIN_TEMPLATE_ID:
        lines = [_PLAIN_SYSTEM]
    else:
        raise GenerationError(f"unknown prompt template {template_id!r}")
    lines.append(f"QUESTION: {_escape_block(inquiry)}")
    lines.append("ANSWER:")
    return "\n".join(lines)


class GenerationClient(Protocol):
    def complete(self, prompt: str, *, inquiry_id: str | None = None, params: GenerationParams | None = None) -> str: ...


class ScriptedGenerationClient:
    """Deterministic fixture client mapping inquiry_id or prompt hash to canned text."""

    def __init__(self, entries: dict[str, str] | None = None, default: str | None = None) -> None:
        self.entries = dict(entries or {})
        self.default = default

    @classmethod
    def from_file(cls, path: str | Path, default: str | None = None) -> ScriptedGenerationClient:
        """Load a fixture file: a JSON object mapping inquiry_id -> canned text."""
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), default=default)

    def complete(self, prompt: str, *, inquiry_id: str | None = None, params: GenerationParams | None = None) -> str:
        if inquiry_id is not None and inquiry_id in self.entries:
            return self.entries[inquiry_id]
        hashed = prompt_hash(prompt)
        if hashed in self.entries:
            return self.entries[hashed]
        if self.default is not None:
            return self.default
        raise GenerationError(f"no script entry for inquiry_id={inquiry_id!r} or prompt hash {hashed[:12]}")


class RemoteGenerationClient:
    """Chat/completions-style HTTP endpoint client.

    Request: POST ``{"model": ..., "messages": [{"role": "user", "content": prompt}],
    "max_tokens": ..., "temperature": ...}``.
    Response: ``{"choices": [{"message": {"content": text}}]}``.
    Transport failures and timeouts get 2 retries (backoff starting 250 ms),
    then a hard GenerationError.
    """

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        api_key: str | None = None,
        timeout: float = 60.0,
    ) -> None:
        if not endpoint:
            raise GenerationError("no generation endpoint configured")
        self.endpoint = endpoint
        self.model_id = model_id
        self.api_key = api_key if api_key is not None else os.environ.get("GEN_API_KEY")
        self.timeout = timeout

    def complete(self, prompt: str, *, inquiry_id: str | None = None, params: GenerationParams | None = None) -> str:
        params = params or GenerationParams()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        def call() -> str:
            resp = requests.post(
                self.endpoint,
                json={
                    "model": self.model_id,
                    "messages": [{"role": "user", "content": prompt}],
                    "max_tokens": params.max_tokens,
                    "temperature": params.temperature,
                },
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["choices"][0]["message"]["content"]

        try:
            return with_retries(call, retryable=(requests.RequestException, KeyError, IndexError, ValueError))
        except Exception as exc:
            raise GenerationError(f"generation endpoint failed after retries: {exc}") from exc


@dataclass(frozen=True)
class GenerationResult:
    text: str
    latency_ms: int


def generate(
    client: GenerationClient,
    prompt: str,
    params: GenerationParams = GenerationParams(),
    inquiry_id: str | None = None,
) -> GenerationResult:
    """Run one generation call, measuring latency; empty output is an error."""
    start = time.perf_counter()
    text = client.complete(prompt, inquiry_id=inquiry_id, params=params)
    latency_ms = int((time.perf_counter() - start) * 1000)
    if not text or not text.strip():
        raise GenerationError("empty generation")
    return GenerationResult(text=text, latency_ms=latency_ms)


def run_pipeline(
    config: PipelineConfig,
    inquiry: str,
    index: VectorIndex | None,
    provider: EmbeddingProvider | None,
    client: GenerationClient,
    *,
    inquiry_id: str | None = None,
    params: GenerationParams = GenerationParams(),
    channel: str = "",
    excerpt_chars: int = 240,
) -> Draft:
    """Run one inquiry through a pipeline configuration and produce a Draft.

    Retrieval-enabled configs embed the inquiry, take the top-k chunks from
    the index snapshot passed in, and cite them on the draft; the other
    configs go straight to the generator with the plain template.
    """
    inquiry_id = inquiry_id or inquiry_id_for(inquiry)
    hits_with_text: list[tuple[RetrievalHit, str]] = []
    if config.retrieval_enabled:
        if index is None or provider is None:
            raise GenerationError(f"config {config.name} requires a published index and embedding provider")
        if index.texts is None:
            raise GenerationError("index has no chunk texts attached; call attach_texts() after loading")
        qvec = provider.embed([inquiry])[0]
        for hit in search(index, qvec, config.top_k):
            hits_with_text.append((hit, index.texts[hit.chunk_id]))
    prompt = assemble_prompt(inquiry, hits_with_text, config.prompt_template_id)
    result = generate(client, prompt, params, inquiry_id=inquiry_id)
    citations = [
        Citation(chunk_id=hit.chunk_id, score=hit.score, rank=hit.rank, excerpt=text[:excerpt_chars])
        for hit, text in hits_with_text
    ]
    return Draft(
        draft_id=uuid.uuid4().hex,
        inquiry_id=inquiry_id,
        config_name=config.name,
        response_text=result.text,
        citations=citations,
        created_at=datetime.now(timezone.utc).isoformat(),
        latency_ms=result.latency_ms,
        status="pending_review",
        inquiry_text=inquiry,
        channel=channel,
    )
