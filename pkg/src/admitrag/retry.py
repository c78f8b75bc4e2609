"""Retry policy shared by the remote embedding and generation clients."""

from __future__ import annotations

import logging
import time
from typing import Callable, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_RETRIES = 2
DEFAULT_BASE_DELAY = 0.25


def with_retries(
    fn: Callable[[], T],
    *,
    retries: int = DEFAULT_RETRIES,
    base_delay: float = DEFAULT_BASE_DELAY,
    retryable: tuple[type[Exception], ...] = (Exception,),
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """Call ``fn``, retrying transient failures with exponential backoff.

    Makes at most ``retries + 1`` attempts; delays are base_delay, 2*base_delay, ...
    The last failure is re-raised unchanged.
    """
    attempt = 0
    while True:
        try:
            return fn()
        except retryable as exc:
            if attempt >= retries:
                raise
            delay = base_delay * (2**attempt)
            logger.warning("attempt %d failed (%s); retrying in %.2fs", attempt + 1, exc, delay)
            sleep(delay)
            attempt += 1
