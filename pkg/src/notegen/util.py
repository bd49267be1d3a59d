"""Small shared helpers: retry policy, stable hashing, float formatting."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from typing import Callable, TypeVar

log = logging.getLogger(__name__)

T = TypeVar("T")


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff: base_delay, base_delay*factor, ... up to attempts tries."""

    attempts: int = 5
    base_delay: float = 1.0
    factor: float = 2.0

    def delays(self):
        d = self.base_delay
        for _ in range(self.attempts - 1):
            yield d
            d *= self.factor


def with_retries(
    fn: Callable[[], T],
    policy: RetryPolicy,
    what: str,
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """Call fn, retrying transient failures per policy. Re-raises the last error."""
    last: Exception | None = None
    delays = policy.delays()
    for attempt in range(1, policy.attempts + 1):
        try:
            return fn()
        except Exception as exc:
            last = exc
            if attempt == policy.attempts:
                break
            delay = next(delays)
            log.warning("%s failed (attempt %d/%d): %s; retrying in %.1fs",
                        what, attempt, policy.attempts, exc, delay)
            sleep(delay)
    raise RuntimeError(f"{what} failed after {policy.attempts} attempts: {last}") from last


def stable_hash(payload: object) -> str:
    """Process-independent sha256 hex of a JSON-serializable payload."""
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def fmt_real(x: float) -> str:
    """Render a real with 6 significant digits for CSV output."""
    return format(float(x), ".6g")
