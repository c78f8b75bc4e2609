"""Exception hierarchy shared across the package."""

from __future__ import annotations


class AdmitragError(Exception):
    """Base class for all package errors."""


class IngestionError(AdmitragError):
    """Raised when a document cannot be ingested (bad encoding, empty text, bad id)."""


class RedactionRuleError(AdmitragError):
    """Raised when a redaction rule fails validation."""


class EmbeddingError(AdmitragError):
    """Raised when an embedding provider fails after retries or on dim mismatch."""


class IndexFormatError(AdmitragError):
    """Raised when an index file is missing, truncated, or has a bad header."""


class GenerationError(AdmitragError):
    """Raised when a generation client fails after retries or returns empty output."""


class DistillationError(AdmitragError):
    """Raised when a distillation job cannot proceed (oversize batch, dead generator)."""


class EvaluationError(AdmitragError):
    """Raised on unusable evaluation input (empty benchmark, mismatched ratings)."""


class StorageError(AdmitragError):
    """Raised when persisted state cannot be read or written."""
