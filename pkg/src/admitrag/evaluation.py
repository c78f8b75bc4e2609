"""Evaluation metrics and the four-configuration comparison report.

Fact recall is made mechanical: each benchmark case carries gold fact specs
with match patterns, and a fact counts as recalled when any pattern matches
the (normalized) response. Precise facts (dates, URLs) additionally require
the matched fragment to normalize to the fact's canonical value, so a correct
date in a different surface format still counts. A judgments file of explicit
per-(inquiry, fact) booleans can override pattern matching, letting
human-judged runs flow through the same report pipeline.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

from .chunking import Token, tokenize
from .corpus import normalize_text
from .errors import EvaluationError

FACT_KINDS = ("general_fact", "precise_date", "precise_url")
PRECISE_KINDS = frozenset({"precise_date", "precise_url"})

CONFIG_ORDER = ("baseline", "rag_only", "finetuned_only", "finetuned_rag")
CONFIG_DISPLAY_NAMES = {
    "baseline": "Baseline GPT",
    "rag_only": "RAG Model",
    "finetuned_only": "Fine-Tuned (No RAG)",
    "finetuned_rag": "Fine-Tuned with RAG",
}
REPORT_COLUMNS = ("Model", "Fact Recall (%)", "Precise Data Recall (%)", "User Satisfaction (1-10)")
ABSENT_CELL = "—"  # em dash for absent satisfaction

_MONTHS_EN = {
    name: i + 1
    for i, name in enumerate(
        "january february march april may june july august september october november december".split()
    )
}
_MONTHS_RU_GENITIVE = {
    name: i + 1
    for i, name in enumerate(
        "января февраля марта апреля мая июня июля августа сентября октября ноября декабря".split()
    )
}
_MONTHS_RU_NOMINATIVE = {
    name: i + 1
    for i, name in enumerate(
        "январь февраль март апрель май июнь июль август сентябрь октябрь ноябрь декабрь".split()
    )
}
_MONTHS = {**_MONTHS_EN, **_MONTHS_RU_GENITIVE, **_MONTHS_RU_NOMINATIVE}

_DOTTED_DATE = re.compile(r"(\d{1,2})\.(\d{1,2})\.(\d{4})")
_ISO_DATE = re.compile(r"(\d{4})-(\d{2})-(\d{2})")
_NAMED_DATE = re.compile(r"(\d{1,2})\s+([^\W\d_]+)\s+(\d{4})", re.UNICODE)


def round_half_up(value: float, places: str = "0.1") -> float:
    return float(Decimal(str(value)).quantize(Decimal(places), rounding=ROUND_HALF_UP))


def format_1dp(value: float) -> str:
    return str(Decimal(str(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def normalize_date(text_fragment: str) -> str | None:
    """Normalize a date fragment to ISO-8601, or None if unrecognized.

    Accepts DD.MM.YYYY, YYYY-MM-DD, and "D <monthname> YYYY" with English and
    Russian month names (case-insensitive, nominative or genitive).
    """
    fragment = text_fragment.strip()
    m = _DOTTED_DATE.fullmatch(fragment)
    if m:
        day, month, year = int(m.group(1)), int(m.group(2)), int(m.group(3))
    else:
        m = _ISO_DATE.fullmatch(fragment)
        if m:
            year, month, day = int(m.group(1)), int(m.group(2)), int(m.group(3))
        else:
            m = _NAMED_DATE.fullmatch(fragment)
            if not m:
                return None
            month_num = _MONTHS.get(m.group(2).casefold())
            if month_num is None:
                return None
            day, month, year = int(m.group(1)), month_num, int(m.group(3))
    try:
        return date(year, month, day).isoformat()
    except ValueError:
        return None


def normalize_url(text_fragment: str) -> str | None:
    """Normalize a URL fragment, or None if it is not an http(s) URL.

    Lowercases scheme and host, drops default ports, strips a single trailing
    slash, and keeps path/query case untouched.
    """
    fragment = text_fragment.strip()
    parts = urlsplit(fragment)
    if parts.scheme not in ("http", "https") or not parts.netloc:
        return None
    userinfo, _, hostport = parts.netloc.rpartition("@")
    host, sep, port = hostport.rpartition(":")
    if sep and port.isdigit():
        port_num = int(port)
    else:
        host, port_num = hostport, None
    host = host.lower()
    default_port = 80 if parts.scheme == "http" else 443
    netloc = host if (port_num is None or port_num == default_port) else f"{host}:{port_num}"
    if userinfo:
        netloc = f"{userinfo}@{netloc}"
    path = parts.path
    if path.endswith("/"):
        path = path[:-1]
    url = f"{parts.scheme}://{netloc}{path}"
    if parts.query:
        url += f"?{parts.query}"
    if parts.fragment:
        url += f"#{parts.fragment}"
    return url


@dataclass(frozen=True)
class MatchPattern:
    type: str  # "literal" | "regex"
    value: str

    def __post_init__(self) -> None:
        if self.type not in ("literal", "regex"):
            raise EvaluationError(f"unknown pattern type {self.type!r}")
        if self.type == "regex":
            try:
                re.compile(self.value)
            except re.error as exc:
                raise EvaluationError(f"bad regex pattern {self.value!r}: {exc}") from exc


@dataclass(frozen=True)
class FactSpec:
    fact_id: str
    kind: str
    patterns: tuple[MatchPattern, ...]
    canonical_value: str = ""

    def __post_init__(self) -> None:
        if self.kind not in FACT_KINDS:
            raise EvaluationError(f"unknown fact kind {self.kind!r}")
        if not self.patterns:
            raise EvaluationError(f"fact {self.fact_id}: at least one pattern required")
        if self.kind in PRECISE_KINDS and not self.canonical_value:
            raise EvaluationError(f"fact {self.fact_id}: precise kinds need a canonical_value")

    @classmethod
    def from_json(cls, obj: dict) -> FactSpec:
        return cls(
            fact_id=obj["fact_id"],
            kind=obj["kind"],
            patterns=tuple(MatchPattern(p["type"], p["value"]) for p in obj["patterns"]),
            canonical_value=obj.get("canonical_value", ""),
        )

    def to_json(self) -> dict:
        return {
            "fact_id": self.fact_id,
            "kind": self.kind,
            "patterns": [{"type": p.type, "value": p.value} for p in self.patterns],
            "canonical_value": self.canonical_value,
        }


@dataclass(frozen=True)
class BenchmarkCase:
    inquiry_id: str
    inquiry_text: str
    gold_facts: tuple[FactSpec, ...]
    topic_tag: str = ""

    def __post_init__(self) -> None:
        if not self.inquiry_text:
            raise EvaluationError(f"case {self.inquiry_id}: inquiry_text must be non-empty")
        ids = [f.fact_id for f in self.gold_facts]
        if len(set(ids)) != len(ids):
            raise EvaluationError(f"case {self.inquiry_id}: duplicate fact ids")

    @classmethod
    def from_json(cls, obj: dict) -> BenchmarkCase:
        return cls(
            inquiry_id=obj["inquiry_id"],
            inquiry_text=obj["inquiry_text"],
            gold_facts=tuple(FactSpec.from_json(f) for f in obj.get("gold_facts", [])),
            topic_tag=obj.get("topic_tag", ""),
        )

    def to_json(self) -> dict:
        return {
            "inquiry_id": self.inquiry_id,
            "inquiry_text": self.inquiry_text,
            "gold_facts": [f.to_json() for f in self.gold_facts],
            "topic_tag": self.topic_tag,
        }


@dataclass(frozen=True)
class ReviewRating:
    draft_id: str
    rater_id: str
    score: int
    edited_text: str | None = None

    def __post_init__(self) -> None:
        if self.score not in (0, 1, 2):
            raise EvaluationError(f"rating score must be 0, 1, or 2; got {self.score}")


@dataclass(frozen=True)
class SatisfactionEntry:
    respondent_id: str
    score: int
    config_name: str

    def __post_init__(self) -> None:
        if not 1 <= self.score <= 10:
            raise EvaluationError(f"satisfaction score must be in [1, 10]; got {self.score}")


class _MatchedResponse:
    """Tokenized normalized response with fragment extraction by token span."""

    def __init__(self, text: str) -> None:
        self.text = normalize_text(text)
        self.encoded = self.text.encode("utf-8")
        self.tokens: list[Token] = tokenize(self.text)
        self.folded = [t.text.casefold() for t in self.tokens]

    def fragments_for_literal(self, literal: str) -> Iterable[str]:
        """Substrings of the response whose token sequence equals the literal's."""
        pattern = [t.text.casefold() for t in tokenize(literal)]
        if not pattern:
            return
        n, m = len(self.folded), len(pattern)
        for i in range(n - m + 1):
            if self.folded[i : i + m] == pattern:
                start = self.tokens[i].byte_start
                end = self.tokens[i + m - 1].byte_end
                yield self.encoded[start:end].decode("utf-8")

    def fragments_for_regex(self, pattern: str) -> Iterable[str]:
        for m in re.finditer(pattern, self.text):
            yield m.group(0)


def _fact_matched(fact: FactSpec, response: _MatchedResponse) -> bool:
    for pattern in fact.patterns:
        if pattern.type == "literal":
            fragments = response.fragments_for_literal(pattern.value)
        else:
            fragments = response.fragments_for_regex(pattern.value)
        for fragment in fragments:
            if fact.kind == "general_fact":
                return True
            normalized = normalize_date(fragment) if fact.kind == "precise_date" else normalize_url(fragment)
            if normalized is not None and normalized == fact.canonical_value:
                return True
    return False


Judgments = Mapping[tuple[str, str], bool]


def _recall(
    responses: Mapping[str, str],
    benchmark: Sequence[BenchmarkCase],
    kinds: frozenset[str] | None,
    judgments: Judgments | None,
) -> float:
    if not benchmark:
        raise EvaluationError("empty benchmark")
    total = 0
    recalled = 0
    for case in benchmark:
        facts = [f for f in case.gold_facts if kinds is None or f.kind in kinds]
        if not facts:
            continue
        total += len(facts)
        text = responses.get(case.inquiry_id)
        response = _MatchedResponse(text) if text is not None else None
        for fact in facts:
            if judgments is not None and (case.inquiry_id, fact.fact_id) in judgments:
                recalled += 1 if judgments[(case.inquiry_id, fact.fact_id)] else 0
                continue
            if response is not None and _fact_matched(fact, response):
                recalled += 1
    if total == 0:
        raise EvaluationError("no precise facts in benchmark" if kinds else "benchmark has no facts")
    return 100.0 * recalled / total


def fact_recall(
    responses: Mapping[str, str],
    benchmark: Sequence[BenchmarkCase],
    judgments: Judgments | None = None,
) -> float:
    """Percentage of gold facts present in the responses, over all cases.

    A missing response counts all of its case's facts as unmatched.
    """
    return _recall(responses, benchmark, None, judgments)


def precise_data_recall(
    responses: Mapping[str, str],
    benchmark: Sequence[BenchmarkCase],
    judgments: Judgments | None = None,
) -> float:
    """Fact recall restricted to precise kinds (dates and URLs)."""
    return _recall(responses, benchmark, PRECISE_KINDS, judgments)


def cohens_kappa(ratings_a: Sequence, ratings_b: Sequence) -> float:
    """Chance-corrected agreement between two aligned rating lists.

    kappa = (p_o - p_e) / (1 - p_e) with p_e from the raters' marginal
    distributions; the degenerate single-category case returns 1.
    """
    if len(ratings_a) != len(ratings_b):
        raise EvaluationError(f"rating lists differ in length: {len(ratings_a)} vs {len(ratings_b)}")
    n = len(ratings_a)
    if n == 0:
        raise EvaluationError("empty rating lists")
    p_o = sum(1 for a, b in zip(ratings_a, ratings_b) if a == b) / n
    categories = set(ratings_a) | set(ratings_b)
    p_e = 0.0
    for cat in categories:
        p_e += (sum(1 for a in ratings_a if a == cat) / n) * (sum(1 for b in ratings_b if b == cat) / n)
    if p_e >= 1.0:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def satisfaction_mean(entries: Sequence[SatisfactionEntry], config_name: str) -> float | None:
    """Mean 1-10 survey score for one config, rounded to 1 decimal; None if no entries."""
    scores = [e.score for e in entries if e.config_name == config_name]
    if not scores:
        return None
    return round_half_up(sum(scores) / len(scores))


def rating_distribution(ratings: Sequence[ReviewRating]) -> dict[int, int]:
    """Counts of the 0/1/2 send-worthiness judgments."""
    dist = {0: 0, 1: 0, 2: 0}
    for rating in ratings:
        dist[rating.score] += 1
    return dist


@dataclass(frozen=True)
class MetricRow:
    fact_recall_pct: float
    precise_data_recall_pct: float
    user_satisfaction_mean: float | None = None

    def __post_init__(self) -> None:
        for value in (self.fact_recall_pct, self.precise_data_recall_pct):
            if not 0.0 <= value <= 100.0:
                raise EvaluationError(f"percentage out of range: {value}")
        if self.user_satisfaction_mean is not None and not 1.0 <= self.user_satisfaction_mean <= 10.0:
            raise EvaluationError(f"satisfaction mean out of range: {self.user_satisfaction_mean}")


@dataclass
class EvaluationReport:
    rows: dict[str, MetricRow]
    benchmark_id: str = ""
    case_count: int = 0
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def ordered_configs(self) -> list[str]:
        return [name for name in CONFIG_ORDER if name in self.rows]

    def to_json(self) -> dict:
        return {
            "rows": {
                name: {
                    "fact_recall_pct": row.fact_recall_pct,
                    "precise_data_recall_pct": row.precise_data_recall_pct,
                    "user_satisfaction_mean": row.user_satisfaction_mean,
                }
                for name, row in self.rows.items()
            },
            "metadata": {
                "benchmark_id": self.benchmark_id,
                "case_count": self.case_count,
                "timestamp": self.timestamp,
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> EvaluationReport:
        meta = obj.get("metadata", {})
        return cls(
            rows={
                name: MetricRow(
                    fact_recall_pct=row["fact_recall_pct"],
                    precise_data_recall_pct=row["precise_data_recall_pct"],
                    user_satisfaction_mean=row.get("user_satisfaction_mean"),
                )
                for name, row in obj["rows"].items()
            },
            benchmark_id=meta.get("benchmark_id", ""),
            case_count=int(meta.get("case_count", 0)),
            timestamp=meta.get("timestamp", ""),
        )


def build_report(
    rows: Mapping[str, MetricRow],
    benchmark_id: str = "",
    case_count: int = 0,
    timestamp: str | None = None,
) -> EvaluationReport:
    """Assemble the per-configuration report in the fixed row order."""
    unknown = set(rows) - set(CONFIG_ORDER)
    if unknown:
        raise EvaluationError(f"unknown config names: {sorted(unknown)}")
    report = EvaluationReport(rows=dict(rows), benchmark_id=benchmark_id, case_count=case_count)
    if timestamp is not None:
        report.timestamp = timestamp
    return report


def _row_cells(report: EvaluationReport, name: str) -> list[str]:
    row = report.rows[name]
    satisfaction = ABSENT_CELL if row.user_satisfaction_mean is None else format_1dp(row.user_satisfaction_mean)
    return [
        CONFIG_DISPLAY_NAMES[name],
        format_1dp(row.fact_recall_pct),
        format_1dp(row.precise_data_recall_pct),
        satisfaction,
    ]


def render_csv(report: EvaluationReport) -> str:
    """Deterministic CSV: identical inputs produce byte-identical output."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for name in report.ordered_configs():
        writer.writerow(_row_cells(report, name))
    return buf.getvalue()


def render_markdown(report: EvaluationReport) -> str:
    lines = ["# Response generation comparison", ""]
    lines.append("| " + " | ".join(REPORT_COLUMNS) + " |")
    lines.append("|" + "|".join(["---"] * len(REPORT_COLUMNS)) + "|")
    for name in report.ordered_configs():
        lines.append("| " + " | ".join(_row_cells(report, name)) + " |")
    lines.append("")
    if report.benchmark_id:
        lines.append(f"Benchmark: {report.benchmark_id} ({report.case_count} cases)")
        lines.append("")
    return "\n".join(lines)


def load_benchmark(path: str | Path) -> list[BenchmarkCase]:
    cases = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                cases.append(BenchmarkCase.from_json(json.loads(line)))
    return cases


def load_judgments(path: str | Path) -> dict[tuple[str, str], bool]:
    judgments: dict[tuple[str, str], bool] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                judgments[(obj["inquiry_id"], obj["fact_id"])] = bool(obj["matched"])
    return judgments


def load_ratings(path: str | Path) -> list[ReviewRating]:
    ratings = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                ratings.append(
                    ReviewRating(
                        draft_id=obj["draft_id"],
                        rater_id=obj["rater_id"],
                        score=int(obj["score"]),
                        edited_text=obj.get("edited_text"),
                    )
                )
    return ratings


def load_satisfaction(path: str | Path) -> list[SatisfactionEntry]:
    entries = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                entries.append(
                    SatisfactionEntry(
                        respondent_id=obj["respondent_id"],
                        score=int(obj["score"]),
                        config_name=obj["config_name"],
                    )
                )
    return entries
