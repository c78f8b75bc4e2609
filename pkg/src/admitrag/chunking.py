"""Deterministic tokenization and sliding-window chunking.

The reference tokenizer splits on Unicode word boundaries: every maximal run
of letters/digits is one token, every other non-whitespace character is a
single-character token, and whitespace produces nothing. Alternative
tokenizers can be registered by name; chunking invariants (coverage, exact
overlap, determinism) hold for any of them because they operate purely on
token sequences.

Token offsets are byte offsets into the UTF-8 encoding of the source text so
chunk text can be materialized by byte-span slicing, preserving original
whitespace inside the span.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, NamedTuple

from .corpus import Document

# Letter/digit runs (\w minus underscore), else any single non-whitespace char.
_TOKEN_RE = re.compile(r"[^\W_]+|\S")

DEFAULT_CHUNK_SIZE = 512
DEFAULT_OVERLAP = 64


class Token(NamedTuple):
    text: str
    byte_start: int
    byte_end: int


@dataclass(frozen=True)
class ChunkingParams:
    chunk_size: int = DEFAULT_CHUNK_SIZE
    overlap: int = DEFAULT_OVERLAP

    def __post_init__(self) -> None:
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if not 0 <= self.overlap < self.chunk_size:
            raise ValueError(f"overlap must satisfy 0 <= overlap < chunk_size, got {self.overlap}")

    @property
    def stride(self) -> int:
        return self.chunk_size - self.overlap


@dataclass(frozen=True)
class Chunk:
    """A contiguous token window of one document."""

    chunk_id: tuple[str, int]  # (doc_id, ordinal)
    token_span: tuple[int, int]  # [start_token, end_token)
    text: str
    doc_revision: int

    @property
    def key(self) -> str:
        """Flat string id used by the retrieval index: ``<doc_id>#<ordinal>``."""
        doc_id, ordinal = self.chunk_id
        return f"{doc_id}#{ordinal}"

    def to_json(self) -> dict:
        return {
            "doc_id": self.chunk_id[0],
            "ordinal": self.chunk_id[1],
            "token_span": list(self.token_span),
            "text": self.text,
            "doc_revision": self.doc_revision,
        }


def parse_chunk_key(key: str) -> tuple[str, int]:
    """Split ``<doc_id>#<ordinal>`` back into its parts (doc_id may contain '#')."""
    doc_id, _, ordinal = key.rpartition("#")
    return doc_id, int(ordinal)


Tokenizer = Callable[[str], list[Token]]

_TOKENIZERS: dict[str, Tokenizer] = {}


def register_tokenizer(name: str, fn: Tokenizer) -> None:
    _TOKENIZERS[name] = fn


def get_tokenizer(name: str = "reference") -> Tokenizer:
    try:
        return _TOKENIZERS[name]
    except KeyError:
        raise KeyError(f"no tokenizer registered under {name!r}") from None


def tokenize(text: str) -> list[Token]:
    """Reference tokenizer: letter/digit runs, single punctuation chars, no whitespace."""
    matches = [(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]
    if not matches:
        return []
    if text.isascii():
        return [Token(t, s, e) for t, s, e in matches]
    # Convert char offsets to UTF-8 byte offsets by encoding the gaps between
    # consecutive boundaries once, in order.
    boundaries = sorted({pos for _, s, e in matches for pos in (s, e)})
    byte_at: dict[int, int] = {}
    prev_char = 0
    prev_byte = 0
    for pos in boundaries:
        prev_byte += len(text[prev_char:pos].encode("utf-8"))
        byte_at[pos] = prev_byte
        prev_char = pos
    return [Token(t, byte_at[s], byte_at[e]) for t, s, e in matches]


register_tokenizer("reference", tokenize)


def chunk_document(
    doc: Document,
    params: ChunkingParams = ChunkingParams(),
    tokenizer: Tokenizer = tokenize,
) -> list[Chunk]:
    """Segment a document into overlapping token windows.

    Chunk i spans tokens [i*stride, i*stride + chunk_size), clipped to the
    token count; emission stops once a chunk reaches the end of the document,
    so only the final chunk may be shorter. An empty document yields no chunks.
    """
    tokens = tokenizer(doc.text)
    n = len(tokens)
    if n == 0:
        return []
    encoded = doc.text.encode("utf-8")
    chunks: list[Chunk] = []
    start = 0
    ordinal = 0
    while True:
        end = min(start + params.chunk_size, n)
        text = encoded[tokens[start].byte_start : tokens[end - 1].byte_end].decode("utf-8")
        chunks.append(
            Chunk(
                chunk_id=(doc.doc_id, ordinal),
                token_span=(start, end),
                text=text,
                doc_revision=doc.revision,
            )
        )
        if end >= n:
            break
        start += params.stride
        ordinal += 1
    return chunks
