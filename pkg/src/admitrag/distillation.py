"""Distill knowledge-base documents into an Alpaca-format training dataset.

A distillation job sends a batch of documents to a generation endpoint with a
prompt demanding a strict JSON array of question/answer objects grounded only
in those documents. Parsed pairs pass through a token-overlap grounding gate
(a cheap, deterministic hallucination filter) and exact-duplicate removal
before being written as JSON-Lines records.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .chunking import Tokenizer, tokenize
from .corpus import Document
from .errors import DistillationError, GenerationError

logger = logging.getLogger(__name__)

DEFAULT_MIN_GROUNDING = 0.6
DEFAULT_CONTEXT_BUDGET = 8192  # prompt tokens, reference tokenizer

PROMPT_TEMPLATE_ID = "distill-v1"

_PROMPT_HEADER = (
    "You are preparing training data for a university admissions assistant.\n"
    "Read the documents below and write question-answer pairs that prospective\n"
    "applicants might ask. Use only information stated in these documents; do\n"
    "not invent facts. Respond with a strict JSON array of objects, each with\n"
    'exactly two string fields: "question" and "answer". No other text.\n'
    "Write {n} pairs.\n"
)

# Minimal stopword lists; grounding only needs to ignore glue words.
STOPWORDS: dict[str, frozenset[str]] = {
    "en": frozenset(
        """a an and are as at be been but by can could do does for from had has have
        if in into is it its may might must not of on or shall should that the their
        them then there these they this to was were will with would your you
        """.split()
    ),
    "ru": frozenset(
        """и в во не на я с со как а то все она так его но да ты к у же вы за бы по
        только ее мне было вот от меня еще нет о из ему теперь когда даже ну ли если
        уже или ни быть был него до вас нибудь опять уж вам этот они тут где есть надо
        ней для мы тебя их чем была сам чтоб без будто человек чего раз тоже себе под
        будет при был про всего них какая много разве эту мою свою этой перед иногда
        лучше чуть том такой им более всегда конечно всю между это
        """.split()
    ),
}


def stopwords_for(languages: Iterable[str]) -> frozenset[str]:
    words: set[str] = set()
    for lang in languages:
        try:
            words |= STOPWORDS[lang]
        except KeyError:
            raise DistillationError(f"no stopword list for language {lang!r}") from None
    return frozenset(words)


@dataclass(frozen=True)
class AlpacaRecord:
    """One instruction/input/output training pair distilled from source docs."""

    instruction: str
    output: str
    source_doc_ids: tuple[str, ...]
    grounding_score: float
    input: str = ""

    def __post_init__(self) -> None:
        if not self.instruction or not self.output:
            raise DistillationError("instruction and output must be non-empty")
        if self.input != "":
            raise DistillationError("input field is always empty for this dataset")

    def to_json(self) -> dict:
        return {
            "instruction": self.instruction,
            "input": self.input,
            "output": self.output,
            "source_doc_ids": list(self.source_doc_ids),
            "grounding_score": self.grounding_score,
        }

    @classmethod
    def from_json(cls, obj: dict) -> AlpacaRecord:
        return cls(
            instruction=obj["instruction"],
            output=obj["output"],
            source_doc_ids=tuple(obj.get("source_doc_ids", [])),
            grounding_score=float(obj["grounding_score"]),
            input=obj.get("input", ""),
        )


@dataclass
class DistillationJob:
    doc_batch: list[Document]
    pairs_requested: int
    prompt_template_id: str = PROMPT_TEMPLATE_ID
    min_grounding: float = DEFAULT_MIN_GROUNDING
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    languages: tuple[str, ...] = ("en", "ru")

    def __post_init__(self) -> None:
        if not self.doc_batch:
            raise DistillationError("doc_batch must be non-empty")
        if self.pairs_requested < 1:
            raise DistillationError("pairs_requested must be >= 1")


@dataclass(frozen=True)
class Reject:
    reason: str
    payload: str = ""


@dataclass
class JobReport:
    generated: int = 0
    accepted: int = 0
    rejected_ungrounded: int = 0
    rejected_malformed: int = 0
    deduplicated: int = 0

    def to_json(self) -> dict:
        return {
            "generated": self.generated,
            "accepted": self.accepted,
            "rejected_ungrounded": self.rejected_ungrounded,
            "rejected_malformed": self.rejected_malformed,
            "deduplicated": self.deduplicated,
        }

    def merge(self, other: JobReport) -> None:
        self.generated += other.generated
        self.accepted += other.accepted
        self.rejected_ungrounded += other.rejected_ungrounded
        self.rejected_malformed += other.rejected_malformed
        self.deduplicated += other.deduplicated


def build_distillation_prompt(job: DistillationJob, tokenizer: Tokenizer = tokenize) -> str:
    """Deterministic prompt: instruction header, then fenced documents in batch order."""
    parts = [_PROMPT_HEADER.format(n=job.pairs_requested)]
    for doc in job.doc_batch:
        parts.append(f"=== DOCUMENT {doc.doc_id} ===")
        parts.append(doc.text)
    prompt = "\n".join(parts)
    n_tokens = len(tokenizer(prompt))
    if n_tokens > job.context_budget:
        raise DistillationError(
            f"batch of {len(job.doc_batch)} documents needs {n_tokens} prompt tokens, "
            f"over the context budget of {job.context_budget}; split the batch"
        )
    return prompt


def parse_pairs(llm_output: str) -> tuple[list[tuple[str, str]], list[Reject]]:
    """Extract question/answer pairs from raw model output.

    Finds the first well-formed JSON array in the text (surrounding prose is
    tolerated). Items that are not objects, are missing a field, or carry empty
    strings become rejects with reasons. Never raises on malformed content:
    output without any parseable array yields zero pairs and one reject.
    """
    decoder = json.JSONDecoder()
    array = None
    pos = llm_output.find("[")
    while pos != -1:
        try:
            candidate, _ = decoder.raw_decode(llm_output, pos)
        except json.JSONDecodeError:
            candidate = None
        if isinstance(candidate, list):
            array = candidate
            break
        pos = llm_output.find("[", pos + 1)
    if array is None:
        return [], [Reject("unparseable", llm_output[:200])]
    pairs: list[tuple[str, str]] = []
    rejects: list[Reject] = []
    for item in array:
        if not isinstance(item, dict):
            rejects.append(Reject("not an object", json.dumps(item, ensure_ascii=False)[:200]))
            continue
        question = item.get("question")
        answer = item.get("answer")
        if not isinstance(question, str) or not question.strip():
            rejects.append(Reject("missing or empty question", json.dumps(item, ensure_ascii=False)[:200]))
            continue
        if not isinstance(answer, str) or not answer.strip():
            rejects.append(Reject("missing or empty answer", json.dumps(item, ensure_ascii=False)[:200]))
            continue
        pairs.append((question.strip(), answer.strip()))
    return pairs, rejects


def grounding_score(
    answer: str,
    source_texts: list[str],
    stopwords: frozenset[str] | None = None,
    tokenizer: Tokenizer = tokenize,
) -> float:
    """Fraction of answer content tokens present in the union of source tokens.

    Content tokens are alphanumeric tokens minus the stopword list, compared
    case-insensitively. An answer with no content tokens scores 0.
    """
    if stopwords is None:
        stopwords = stopwords_for(("en", "ru"))
    source_tokens: set[str] = set()
    for text in source_texts:
        source_tokens.update(tok.text.casefold() for tok in tokenizer(text))
    content = [
        t
        for t in (tok.text.casefold() for tok in tokenizer(answer))
        if any(ch.isalnum() for ch in t) and t not in stopwords
    ]
    if not content:
        return 0.0
    matched = sum(1 for t in content if t in source_tokens)
    return matched / len(content)


def run_distillation(job: DistillationJob, generator_client) -> tuple[list[AlpacaRecord], JobReport]:
    """Run one distillation batch through the generator and gate the results.

    Pairs below ``min_grounding`` are excluded and counted; exact-duplicate
    (instruction, output) pairs are collapsed. A generator hard failure
    surfaces as DistillationError; nothing is partially returned for the batch.
    """
    prompt = build_distillation_prompt(job)
    try:
        output = generator_client.complete(prompt)
    except GenerationError as exc:
        raise DistillationError(f"generator failed: {exc}") from exc
    pairs, rejects = parse_pairs(output)
    report = JobReport(generated=len(pairs) + len(rejects), rejected_malformed=len(rejects))
    stopwords = stopwords_for(job.languages)
    source_texts = [doc.text for doc in job.doc_batch]
    doc_ids = tuple(doc.doc_id for doc in job.doc_batch)
    records: list[AlpacaRecord] = []
    seen: set[tuple[str, str]] = set()
    for question, answer in pairs:
        score = grounding_score(answer, source_texts, stopwords)
        if score < job.min_grounding:
            report.rejected_ungrounded += 1
            continue
        key = (question, answer)
        if key in seen:
            report.deduplicated += 1
            continue
        seen.add(key)
        records.append(
            AlpacaRecord(
                instruction=question,
                output=answer,
                source_doc_ids=doc_ids,
                grounding_score=score,
            )
        )
    report.accepted = len(records)
    return records, report


def sort_records(records: list[AlpacaRecord]) -> list[AlpacaRecord]:
    """Deterministic dataset order: (first source doc, instruction)."""
    return sorted(records, key=lambda r: (r.source_doc_ids[0] if r.source_doc_ids else "", r.instruction))


def write_dataset(records: list[AlpacaRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")


def read_dataset(path: str | Path) -> list[AlpacaRecord]:
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(AlpacaRecord.from_json(json.loads(line)))
    return records


def distill_kb(
    documents: list[Document],
    generator_client,
    *,
    pairs_per_batch: int,
    batch_size: int = 4,
    min_grounding: float = DEFAULT_MIN_GROUNDING,
    context_budget: int = DEFAULT_CONTEXT_BUDGET,
) -> tuple[list[AlpacaRecord], JobReport]:
    """Distill a whole document list batch by batch.

    Batches that fail hard keep the partial results gathered so far and the
    error is re-raised after logging, per-job accumulation being
    order-independent; the final dataset is sorted for determinism.
    """
    total_report = JobReport()
    records: list[AlpacaRecord] = []
    seen: set[tuple[str, str]] = set()
    for i in range(0, len(documents), batch_size):
        batch = documents[i : i + batch_size]
        job = DistillationJob(
            doc_batch=batch,
            pairs_requested=pairs_per_batch,
            min_grounding=min_grounding,
            context_budget=context_budget,
        )
        try:
            batch_records, report = run_distillation(job, generator_client)
        except DistillationError as exc:
            # Job fails, but everything gathered before the failure is preserved
            # on the exception so callers can still write a partial dataset.
            logger.error("batch starting at document %s failed: %s", batch[0].doc_id, exc)
            failure = DistillationError(f"distillation aborted at document {batch[0].doc_id}: {exc}")
            failure.partial_records = sort_records(records)  # type: ignore[attr-defined]
            failure.partial_report = total_report  # type: ignore[attr-defined]
            raise failure from exc
        total_report.merge(report)
        for record in batch_records:
            key = (record.instruction, record.output)
            if key in seen:
                total_report.deduplicated += 1
                total_report.accepted -= 1
                continue
            seen.add(key)
            records.append(record)
    return sort_records(records), total_report
