"""Append-only JSON-Lines event logs with per-record checksums.

Each line is ``{"data": {...}, "checksum": "<sha256>"}`` where the checksum
covers the canonical JSON encoding of ``data``. Reads stop at the first
corrupt or truncated line (a torn final write after a crash), so a restart
reconstructs exactly the committed state. Logs are compacted on startup by
rewriting the current state snapshot through a temp file + atomic rename.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

from .errors import StorageError

logger = logging.getLogger(__name__)


def _canonical(data: dict) -> str:
    return json.dumps(data, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def _checksum(data: dict) -> str:
    return hashlib.sha256(_canonical(data).encode("utf-8")).hexdigest()


class EventLog:
    """One append-only log file of checksummed JSON records."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, data: dict) -> None:
        line = json.dumps({"data": data, "checksum": _checksum(data)}, ensure_ascii=False)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def read(self) -> list[dict]:
        """All committed records, dropping any torn tail."""
        if not self.path.exists():
            return []
        records: list[dict] = []
        with self.path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    data = obj["data"]
                    if obj["checksum"] != _checksum(data):
                        raise StorageError("checksum mismatch")
                except (json.JSONDecodeError, KeyError, TypeError, StorageError) as exc:
                    logger.warning("%s:%d: dropping corrupt tail (%s)", self.path, lineno, exc)
                    break
                records.append(data)
        return records

    def compact(self, records: list[dict]) -> None:
        """Atomically rewrite the log as the given snapshot."""
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            for data in records:
                fh.write(json.dumps({"data": data, "checksum": _checksum(data)}, ensure_ascii=False) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        tmp.replace(self.path)
