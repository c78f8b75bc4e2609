"""Embedding providers, exact cosine top-k search, and index persistence.

The index is a flat list of (chunk_id, vector) pairs scanned exactly at query
time; no approximate structures. Vectors are unit-length float32 (or all-zero
for empty text), so scoring reduces to a dot product, but ``cosine`` handles
arbitrary vectors. Indexes are immutable once built and republished whole
after a knowledge-base change.
"""

from __future__ import annotations

import hashlib
import heapq
import os
import struct
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Protocol

import numpy as np
import requests

from .chunking import ChunkingParams, Tokenizer, chunk_document, parse_chunk_key, tokenize
from .corpus import KnowledgeBase
from .errors import EmbeddingError, IndexFormatError
from .retry import with_retries

DEFAULT_DIM = 256
NORM_TOLERANCE = 1e-6

_INDEX_MAGIC = b"ARIX"
_INDEX_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")  # magic, format_version, dim, count, watermark
_REC_LEN = struct.Struct("<I")


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, texts: list[str]) -> list[np.ndarray]: ...


def validate_vector(vec: np.ndarray, dim: int) -> None:
    """Enforce the embedding invariant: finite, unit-norm or all-zero."""
    if vec.shape != (dim,):
        raise EmbeddingError(f"expected dim {dim}, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise EmbeddingError("vector has non-finite components")
    norm = float(np.linalg.norm(vec.astype(np.float64)))
    if norm != 0.0 and abs(norm - 1.0) > NORM_TOLERANCE:
        raise EmbeddingError(f"vector norm {norm} is neither unit nor zero")


@lru_cache(maxsize=131072)
def _bucket_sign(token: str, dim: int) -> tuple[int, float]:
    data = token.encode("utf-8")
    h1 = hashlib.blake2b(data, digest_size=8, person=b"bucket").digest()
    h2 = hashlib.blake2b(data, digest_size=1, person=b"sign").digest()
    return int.from_bytes(h1, "little") % dim, 1.0 if h2[0] & 1 else -1.0


class ReferenceEmbeddingProvider:
    """Deterministic hashed bag-of-tokens embedder.

    Each token is feature-hashed into one of ``dim`` buckets with a +/-1 sign
    from a second hash, weighted by term frequency, then L2-normalized.
    Empty text maps to the all-zero sentinel vector.
    """

    def __init__(self, dim: int = DEFAULT_DIM, tokenizer: Tokenizer = tokenize) -> None:
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self._tokenizer = tokenizer

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            counts = Counter(tok.text for tok in self._tokenizer(text))
            vec = np.zeros(self.dim, dtype=np.float64)
            for token, tf in counts.items():
                bucket, sign = _bucket_sign(token, self.dim)
                vec[bucket] += sign * tf
            norm = float(np.linalg.norm(vec))
            if norm > 0.0:
                vec /= norm
            out.append(vec.astype(np.float32))
        return out


class RemoteEmbeddingProvider:
    """HTTP embedding endpoint client.

    Wire protocol: POST ``{"texts": [...]}``, response ``{"vectors": [[...]]}``.
    Transport failures are retried twice with exponential backoff starting at
    250 ms, then raised as a hard EmbeddingError. Returned vectors are
    re-normalized to unit length (cosine is scale-invariant), zero vectors
    pass through as the empty-text sentinel.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        dim: int = DEFAULT_DIM,
        timeout: float = 30.0,
    ) -> None:
        self.endpoint = endpoint or os.environ.get("EMBED_ENDPOINT", "")
        self.api_key = api_key if api_key is not None else os.environ.get("EMBED_API_KEY")
        if not self.endpoint:
            raise EmbeddingError("no embedding endpoint configured (EMBED_ENDPOINT)")
        self.dim = dim
        self.timeout = timeout

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        def call() -> list[list[float]]:
            resp = requests.post(
                self.endpoint,
                json={"texts": texts},
                headers=self._headers(),
                timeout=self.timeout,
            )
            resp.raise_for_status()
            return resp.json()["vectors"]

        try:
            vectors = with_retries(call, retryable=(requests.RequestException, KeyError, ValueError))
        except Exception as exc:
            raise EmbeddingError(f"embedding endpoint failed after retries: {exc}") from exc
        if len(vectors) != len(texts):
            raise EmbeddingError(f"endpoint returned {len(vectors)} vectors for {len(texts)} texts")
        out = []
        for values in vectors:
            vec = np.asarray(values, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise EmbeddingError(f"expected dim {self.dim}, got vector of shape {vec.shape}")
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError("endpoint returned non-finite vector components")
            norm = float(np.linalg.norm(vec))
            if norm > 0.0:
                vec = vec / norm
            out.append(vec.astype(np.float32))
        return out


@dataclass(frozen=True)
class RetrievalHit:
    chunk_id: str
    score: float
    rank: int  # 1-based


@dataclass
class VectorIndex:
    """Immutable flat vector index over document chunks.

    ``texts`` is an in-memory convenience populated by ``rebuild_index`` (and
    by ``attach_texts`` after loading from disk); it is not persisted because
    chunk texts are re-derivable from the knowledge base.
    """

    dim: int
    entries: list[tuple[str, np.ndarray]]
    kb_revision_watermark: int
    texts: dict[str, str] | None = field(default=None, compare=False)
    _matrix: np.ndarray | None = field(default=None, repr=False, compare=False)
    _norms: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        ids = [cid for cid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise IndexFormatError("duplicate chunk_ids in index")
        for cid, vec in self.entries:
            if vec.shape != (self.dim,):
                raise IndexFormatError(f"entry {cid}: vector dim {vec.shape} != index dim {self.dim}")

    def __len__(self) -> int:
        return len(self.entries)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Entry matrix and per-row norms in float64, computed once."""
        if self._matrix is None:
            self._matrix = np.stack([vec for _, vec in self.entries]).astype(np.float64)
            self._norms = np.linalg.norm(self._matrix, axis=1)
        return self._matrix, self._norms  # type: ignore[return-value]

    def save(self, path: str | Path) -> None:
        """Write the versioned binary index format (bit-exact round-trip)."""
        path = Path(path)
        with path.open("wb") as fh:
            fh.write(_HEADER.pack(_INDEX_MAGIC, _INDEX_VERSION, self.dim, len(self.entries), self.kb_revision_watermark))
            for chunk_id, vec in self.entries:
                raw = chunk_id.encode("utf-8")
                fh.write(_REC_LEN.pack(len(raw)))
                fh.write(raw)
                fh.write(vec.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> VectorIndex:
        path = Path(path)
        if not path.exists():
            raise IndexFormatError(f"index file not found: {path}")
        data = path.read_bytes()
        if len(data) < _HEADER.size:
            raise IndexFormatError(f"{path}: truncated header")
        magic, version, dim, count, watermark = _HEADER.unpack_from(data, 0)
        if magic != _INDEX_MAGIC:
            raise IndexFormatError(f"{path}: bad magic {magic!r}")
        if version != _INDEX_VERSION:
            raise IndexFormatError(f"{path}: unsupported format_version {version}")
        offset = _HEADER.size
        vec_bytes = dim * 4
        entries: list[tuple[str, np.ndarray]] = []
        for _ in range(count):
            if offset + _REC_LEN.size > len(data):
                raise IndexFormatError(f"{path}: truncated record")
            (id_len,) = _REC_LEN.unpack_from(data, offset)
            offset += _REC_LEN.size
            if offset + id_len + vec_bytes > len(data):
                raise IndexFormatError(f"{path}: truncated record")
            chunk_id = data[offset : offset + id_len].decode("utf-8")
            offset += id_len
            vec = np.frombuffer(data[offset : offset + vec_bytes], dtype="<f4").copy()
            offset += vec_bytes
            entries.append((chunk_id, vec))
        return cls(dim=dim, entries=entries, kb_revision_watermark=watermark)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; zero if either vector has zero norm."""
    if a.shape != b.shape:
        raise EmbeddingError(f"dim mismatch: {a.shape} vs {b.shape}")
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    na = float(np.linalg.norm(a64))
    nb = float(np.linalg.norm(b64))
    if na == 0.0 or nb == 0.0:
        return 0.0
    # Clamp float noise so scores stay inside [-1, 1].
    return min(1.0, max(-1.0, float(np.dot(a64, b64) / (na * nb))))


def search(
    index: VectorIndex,
    query: np.ndarray,
    k: int = 3,
    max_per_doc: int | None = None,
) -> list[RetrievalHit]:
    """Exact top-k by cosine similarity, ties broken by ascending chunk_id.

    ``max_per_doc`` optionally caps how many chunks of one document may appear
    in the result; by default chunks are returned as-is, however they rank.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if max_per_doc is not None and max_per_doc < 1:
        raise ValueError(f"max_per_doc must be >= 1, got {max_per_doc}")
    if query.shape != (index.dim,):
        raise EmbeddingError(f"query dim {query.shape} does not match index dim {index.dim}")
    if not index.entries:
        return []
    matrix, norms = index.arrays()
    q = query.astype(np.float64)
    qnorm = float(np.linalg.norm(q))
    # Row-wise pairwise reduction, not BLAS gemv: identical vectors must get
    # bit-identical scores so duplicate entries tie deterministically.
    dots = (matrix * q).sum(axis=1)
    denom = norms * qnorm
    scores = np.where(denom > 0.0, dots / np.where(denom > 0.0, denom, 1.0), 0.0)
    scores = np.clip(scores, -1.0, 1.0)
    ordered = ((-float(scores[i]), cid) for i, (cid, _) in enumerate(index.entries))
    if max_per_doc is None:
        top = heapq.nsmallest(k, ordered)
    else:
        per_doc: dict[str, int] = {}
        top = []
        for neg_score, cid in sorted(ordered):
            doc_id, _ = parse_chunk_key(cid)
            if per_doc.get(doc_id, 0) >= max_per_doc:
                continue
            per_doc[doc_id] = per_doc.get(doc_id, 0) + 1
            top.append((neg_score, cid))
            if len(top) == k:
                break
    return [
        RetrievalHit(chunk_id=cid, score=-neg_score, rank=rank)
        for rank, (neg_score, cid) in enumerate(top, start=1)
    ]


def chunk_texts(
    kb: KnowledgeBase,
    params: ChunkingParams = ChunkingParams(),
    tokenizer: Tokenizer = tokenize,
) -> dict[str, str]:
    """Map every chunk key in the knowledge base to its text."""
    out: dict[str, str] = {}
    for doc in kb.documents():
        for chunk in chunk_document(doc, params, tokenizer):
            out[chunk.key] = chunk.text
    return out


def attach_texts(
    index: VectorIndex,
    kb: KnowledgeBase,
    params: ChunkingParams = ChunkingParams(),
    tokenizer: Tokenizer = tokenize,
    provider: EmbeddingProvider | None = None,
) -> VectorIndex:
    """Populate ``index.texts`` by re-chunking the knowledge base.

    The chunking parameters must match the ones the index was built with,
    otherwise chunk keys will not line up. When a deterministic provider is
    given, a sample of chunks is re-embedded and compared against the stored
    vectors to catch silent parameter mismatches.
    """
    texts = chunk_texts(kb, params, tokenizer)
    missing = [cid for cid, _ in index.entries if cid not in texts]
    if missing:
        raise IndexFormatError(
            f"{len(missing)} index chunks not found in knowledge base "
            f"(first: {missing[0]}); were the chunking parameters different?"
        )
    if provider is not None and index.entries:
        step = max(1, len(index.entries) // 8)
        sample = index.entries[::step][:8]
        vectors = provider.embed([texts[cid] for cid, _ in sample])
        for (cid, stored), fresh in zip(sample, vectors):
            if not np.allclose(stored.astype(np.float64), fresh.astype(np.float64), atol=1e-6):
                raise IndexFormatError(
                    f"chunk {cid}: stored vector does not match re-embedded text; "
                    "index was built with different chunking parameters or provider"
                )
    index.texts = texts
    return index


def rebuild_index(
    kb: KnowledgeBase,
    params: ChunkingParams = ChunkingParams(),
    provider: EmbeddingProvider | None = None,
    tokenizer: Tokenizer = tokenize,
    batch_size: int = 128,
) -> VectorIndex:
    """Chunk and embed every document, producing a fresh immutable index.

    The watermark records the KB revision the index reflects. Callers publish
    the returned index by atomic reference swap; the previous index stays
    valid for in-flight queries. A provider failure propagates and leaves any
    previously published index untouched.
    """
    provider = provider or ReferenceEmbeddingProvider()
    keys: list[str] = []
    texts: list[str] = []
    for doc in kb.documents():
        for chunk in chunk_document(doc, params, tokenizer):
            keys.append(chunk.key)
            texts.append(chunk.text)
    vectors: list[np.ndarray] = []
    for i in range(0, len(texts), batch_size):
        vectors.extend(provider.embed(texts[i : i + batch_size]))
    return VectorIndex(
        dim=provider.dim,
        entries=list(zip(keys, vectors)),
        kb_revision_watermark=kb.revision,
        texts=dict(zip(keys, texts)),
    )
