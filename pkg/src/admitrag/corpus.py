"""Knowledge-base ingestion: text normalization, redaction, and JSONL persistence.

A knowledge base is a set of cleaned plain-text documents keyed by ``doc_id``.
Normalization is a fixed, deterministic pipeline so that ingesting the same
raw text twice always yields the same stored document. Redaction is driven by
an ordered list of regex rules with fixed replacement strings, applied before
a document is stored.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

from .errors import IngestionError, RedactionRuleError

SOURCE_KINDS = ("regulation", "webpage", "faq", "qa_history")

KB_FORMAT_VERSION = 1

_TABS = re.compile(r"\t")
_SPACE_RUNS = re.compile(r" {2,}")
_NEWLINE_RUNS = re.compile(r"\n{3,}")
# Control characters other than \n and \t are dropped outright; \t is handled first.
_CONTROL = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f\x7f]")
# Backreference constructs are rejected so every rule stays linear-time matchable.
_BACKREF = re.compile(r"\\[1-9]|\(\?P=")


def decode_utf8(raw: bytes) -> str:
    """Decode raw bytes as UTF-8, naming the offending byte offset on failure."""
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IngestionError(f"invalid UTF-8 at byte offset {exc.start}") from exc


def normalize_text(raw: str) -> str:
    """Normalize raw text into canonical form.

    Pipeline (idempotent): CRLF/CR to LF, tabs to a single space, other control
    characters removed, runs of spaces collapsed to one, three or more
    consecutive newlines collapsed to two, surrounding whitespace trimmed, and
    finally Unicode NFC.
    """
    for i, ch in enumerate(raw):
        if "\ud800" <= ch <= "\udfff":
            offset = len(raw[:i].encode("utf-8"))
            raise IngestionError(f"invalid Unicode (lone surrogate) at byte offset {offset}")
    text = raw.replace("\r\n", "\n").replace("\r", "\n")
    text = _TABS.sub(" ", text)
    text = _CONTROL.sub("", text)
    text = _SPACE_RUNS.sub(" ", text)
    text = _NEWLINE_RUNS.sub("\n\n", text)
    text = text.strip()
    # NFC last: removing characters earlier may expose new composition pairs.
    return unicodedata.normalize("NFC", text)


@dataclass(frozen=True)
class RedactionRule:
    """One regex redaction rule with a fixed replacement string."""

    rule_id: str
    pattern: str
    replacement: str

    def __post_init__(self) -> None:
        if _BACKREF.search(self.pattern):
            raise RedactionRuleError(f"rule {self.rule_id}: backreferences are not allowed")
        try:
            compiled = re.compile(self.pattern)
        except re.error as exc:
            raise RedactionRuleError(f"rule {self.rule_id}: bad pattern: {exc}") from exc
        if "\\" in self.replacement:
            raise RedactionRuleError(f"rule {self.rule_id}: replacement must be a fixed string")
        object.__setattr__(self, "_compiled", compiled)

    @property
    def compiled(self) -> re.Pattern[str]:
        return self._compiled  # type: ignore[attr-defined]


def redact(text: str, rules: list[RedactionRule]) -> tuple[str, int]:
    """Apply redaction rules in list order, each globally.

    Returns the redacted text and the total number of replacements made.
    An empty rule list is the identity.
    """
    total = 0
    for rule in rules:
        # Replacement goes through a callable so the fixed string is never
        # re-interpreted as a template.
        text, n = rule.compiled.subn(lambda _m, _r=rule.replacement: _r, text)
        total += n
    return text, total


def load_redaction_rules(path: str | Path) -> list[RedactionRule]:
    """Load redaction rules from a JSON file (a list of rule objects)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [RedactionRule(r["rule_id"], r["pattern"], r["replacement"]) for r in data]


@dataclass
class Document:
    """One cleaned knowledge-base document."""

    doc_id: str
    source_kind: str
    title: str
    text: str
    metadata: dict[str, str] = field(default_factory=dict)
    revision: int = 0

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise IngestionError("doc_id must be non-empty")
        if self.source_kind not in SOURCE_KINDS:
            raise IngestionError(f"unknown source_kind {self.source_kind!r}")

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "source_kind": self.source_kind,
            "title": self.title,
            "text": self.text,
            "metadata": dict(self.metadata),
            "revision": self.revision,
        }

    @classmethod
    def from_json(cls, obj: dict) -> Document:
        return cls(
            doc_id=obj["doc_id"],
            source_kind=obj["source_kind"],
            title=obj["title"],
            text=obj["text"],
            metadata=dict(obj.get("metadata", {})),
            revision=int(obj.get("revision", 0)),
        )


class KnowledgeBase:
    """In-memory document store with JSON-Lines persistence.

    Single writer, multiple readers: upserts are serialized by the caller
    (the service wraps them in a lock) and readers always see committed
    documents. Upserting fires change listeners so the retrieval layer can
    schedule a re-index.
    """

    def __init__(self, kb_id: str = "default") -> None:
        self.kb_id = kb_id
        self.revision = 0  # bumps once per upsert, KB-wide
        self._docs: dict[str, Document] = {}
        self._listeners: list[Callable[[Document], None]] = []

    def __len__(self) -> int:
        return len(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def get(self, doc_id: str) -> Document | None:
        return self._docs.get(doc_id)

    def documents(self) -> list[Document]:
        """All documents, ordered by doc_id for deterministic downstream output."""
        return [self._docs[k] for k in sorted(self._docs)]

    def on_change(self, listener: Callable[[Document], None]) -> None:
        self._listeners.append(listener)

    def upsert_document(
        self,
        doc: Document,
        rules: list[RedactionRule] | None = None,
    ) -> int:
        """Normalize, redact, and store a document; returns its new revision."""
        if not doc.doc_id:
            raise IngestionError("doc_id must be non-empty")
        text = normalize_text(doc.text)
        if rules:
            text, _ = redact(text, rules)
        if not text:
            raise IngestionError(f"document {doc.doc_id!r} is empty after cleaning")
        prev = self._docs.get(doc.doc_id)
        revision = (prev.revision + 1) if prev else 1
        stored = Document(
            doc_id=doc.doc_id,
            source_kind=doc.source_kind,
            title=doc.title,
            text=text,
            metadata=dict(doc.metadata),
            revision=revision,
        )
        self._docs[doc.doc_id] = stored
        self.revision += 1
        for listener in self._listeners:
            listener(stored)
        return revision

    def save(self, path: str | Path) -> None:
        """Write the knowledge base as JSON-Lines: header line, then one document per line.

        Writes through a temp file and atomic rename so readers never see a
        partially written knowledge base.
        """
        path = Path(path)
        header = {"format_version": KB_FORMAT_VERSION, "kb_id": self.kb_id, "kb_revision": self.revision}
        lines = [json.dumps(header, ensure_ascii=False)]
        lines.extend(json.dumps(d.to_json(), ensure_ascii=False) for d in self.documents())
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> KnowledgeBase:
        """Load a knowledge base file; later lines win for a repeated doc_id."""
        path = Path(path)
        if not path.exists():
            raise IngestionError(f"knowledge base file not found: {path}")
        with path.open(encoding="utf-8") as fh:
            header_line = fh.readline()
            if not header_line.strip():
                raise IngestionError(f"{path}: missing header line")
            header = json.loads(header_line)
            if header.get("format_version") != KB_FORMAT_VERSION:
                raise IngestionError(f"{path}: unsupported format_version {header.get('format_version')!r}")
            kb = cls(kb_id=header.get("kb_id", "default"))
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    doc = Document.from_json(json.loads(line))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise IngestionError(f"{path}:{lineno}: bad document record: {exc}") from exc
                kb._docs[doc.doc_id] = doc
        kb.revision = int(header.get("kb_revision", sum(d.revision for d in kb._docs.values())))
        return kb

    def snapshot(self) -> KnowledgeBase:
        """Shallow copy for readers that must not observe concurrent upserts."""
        kb = KnowledgeBase(self.kb_id)
        kb._docs = dict(self._docs)
        kb.revision = self.revision
        return kb

    def iter_texts(self) -> Iterator[tuple[str, str]]:
        for doc in self.documents():
            yield doc.doc_id, doc.text
