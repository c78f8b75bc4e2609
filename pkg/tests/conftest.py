from __future__ import annotations

import re

import pytest

from admitrag.corpus import Document, KnowledgeBase


@pytest.fixture
def no_retry_sleep(monkeypatch):
    """Make retry backoff instantaneous."""
    monkeypatch.setattr("admitrag.retry.time.sleep", lambda _s: None)


def make_doc(doc_id: str, text: str, source_kind: str = "faq", title: str = "") -> Document:
    return Document(doc_id=doc_id, source_kind=source_kind, title=title or doc_id, text=text)


def make_kb(texts: dict[str, str]) -> KnowledgeBase:
    kb = KnowledgeBase("test-kb")
    for doc_id in sorted(texts):
        kb.upsert_document(make_doc(doc_id, texts[doc_id]))
    return kb


def words_text(n: int, prefix: str = "w") -> str:
    """Text that tokenizes to exactly n single-word tokens."""
    return " ".join(f"{prefix}{i}" for i in range(n))


class EchoContextClient:
    """Test generator that copies the retrieved chunk texts verbatim.

    Parses the prompt's CONTEXT block; every hit line looks like
    ``[rank] (source: chunk_id) <text>``. Without context it echoes a stub.
    """

    _HIT = re.compile(r"^\[\d+\] \(source: [^)]+\) (.*)$")

    def complete(self, prompt: str, *, inquiry_id=None, params=None) -> str:
        lines = prompt.split("\n")
        texts = []
        in_context = False
        for line in lines:
            if line == "CONTEXT:":
                in_context = True
                continue
            if line.startswith("QUESTION:"):
                break
            if in_context:
                m = self._HIT.match(line)
                if m:
                    texts.append(m.group(1))
        return "\n".join(texts) if texts else "no source material available"
