"""Batched, resumable LLM note generation.

Every call is an independent, stateless chat request: the payload for call i
never carries content from earlier calls. Records land in an append-only
JSONL file per run; a rerun skips call indices whose latest record succeeded
and re-attempts the rest, so an interrupted batch finishes exactly the missing
calls.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import requests

from .prompts import PromptBundle
from .util import RetryPolicy, stable_hash, with_retries

log = logging.getLogger(__name__)

RECORDS_FILENAME = "records.jsonl"
DEFAULT_MAX_IN_FLIGHT = 4


class RunnerError(Exception):
    pass


@dataclass(frozen=True)
class LlmParams:
    model: str = "gpt-4"
    seed: int = 123
    temperature: float = 0.0
    top_p: float = 0.000001
    frequency_penalty: float = 0.0
    presence_penalty: float = 0.0

    def __post_init__(self):
        if self.temperature < 0:
            raise RunnerError(f"temperature must be >= 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise RunnerError(f"top_p must be in (0, 1], got {self.top_p}")

    def to_payload(self) -> dict:
        return {
            "model": self.model,
            "seed": self.seed,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "frequency_penalty": self.frequency_penalty,
            "presence_penalty": self.presence_penalty,
        }


DEFAULT_PARAMS = LlmParams()


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    case_id: str
    strategy: str
    call_index: int
    prompt_hash: str
    generated_text: str
    timestamp: str
    provider_metadata: dict = field(default_factory=dict)
    ok: bool = True

    def key(self) -> tuple[str, str, str, int]:
        return (self.run_id, self.case_id, self.strategy, self.call_index)

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "case_id": self.case_id,
            "strategy": self.strategy,
            "call_index": self.call_index,
            "prompt_hash": self.prompt_hash,
            "generated_text": self.generated_text,
            "timestamp": self.timestamp,
            "provider_metadata": self.provider_metadata,
            "ok": self.ok,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunRecord":
        return cls(
            run_id=doc["run_id"],
            case_id=doc["case_id"],
            strategy=doc["strategy"],
            call_index=int(doc["call_index"]),
            prompt_hash=doc["prompt_hash"],
            generated_text=doc["generated_text"],
            timestamp=doc["timestamp"],
            provider_metadata=doc.get("provider_metadata", {}),
            ok=bool(doc.get("ok", True)),
        )


class RunStore:
    """Append-only record log for one run, living under <root>/<run_id>/."""

    def __init__(self, root: str | Path, run_id: str):
        if not run_id or "/" in run_id:
            raise RunnerError(f"invalid run id {run_id!r}")
        self.run_id = run_id
        self.run_dir = Path(root) / run_id
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.records_path = self.run_dir / RECORDS_FILENAME
        self._lock = threading.Lock()

    def append(self, record: RunRecord) -> None:
        line = json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True)
        with self._lock:
            with open(self.records_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    def load(self) -> dict[tuple[str, str, str, int], RunRecord]:
        """Latest record per (run_id, case_id, strategy, call_index)."""
        out: dict[tuple[str, str, str, int], RunRecord] = {}
        if not self.records_path.is_file():
            return out
        with open(self.records_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = RunRecord.from_dict(json.loads(line))
                except (json.JSONDecodeError, KeyError) as exc:
                    log.warning("%s:%d: unreadable record skipped (%s)",
                                self.records_path, lineno, exc)
                    continue
                out[record.key()] = record
        return out

    def completed_indices(self, case_id: str, strategy: str) -> set[int]:
        return {key[3] for key, record in self.load().items()
                if record.case_id == case_id and record.strategy == strategy and record.ok}


class ChatClient:
    """One stateless chat completion per call."""

    def complete(self, messages: list[dict], params: LlmParams, call_index: int) -> tuple[str, dict]:
        raise NotImplementedError


_STUB_OPENERS = ("The patient reports", "The patient describes", "The patient presents with",
                 "The patient notes")
_STUB_QUALITIES = ("intermittent", "persistent", "progressive", "mild", "severe",
                   "recurrent", "gradual", "sudden-onset")
_STUB_SYMPTOMS = ("pain", "discomfort", "swelling", "numbness", "weakness", "stiffness",
                  "fatigue", "tenderness")
_STUB_SITES = ("the lower jaw", "the abdomen", "the chest", "the left knee",
               "the lumbar region", "the right shoulder", "the neck", "the pelvis")
_STUB_COURSES = ("over the past week", "for several months", "since yesterday",
                 "for the past year", "over recent days", "for two weeks")
_STUB_MODIFIERS = ("worsening with activity", "improving with rest", "unrelieved by analgesics",
                   "accompanied by low-grade fever", "without radiation",
                   "disturbing sleep", "limiting daily activities", "stable in intensity")


class StubChatClient(ChatClient):
    """Deterministic offline stand-in: the note text is a pure function of
    (prompt content, call_index, seed). Invocations are recorded so tests can
    inspect the exact payloads sent."""

    def __init__(self, seed: int = 0, sentences: int = 4):
        self.seed = seed
        self.sentences = sentences
        self.calls: list[dict] = []

    def complete(self, messages: list[dict], params: LlmParams, call_index: int) -> tuple[str, dict]:
        self.calls.append({
            "call_index": call_index,
            "messages": json.loads(json.dumps(messages)),
            "params": params.to_payload(),
        })
        prompt_hash = stable_hash(messages)
        digest = hashlib.sha256(
            f"{self.seed}\x00{call_index}\x00{prompt_hash}".encode()).digest()
        parts = []
        for s in range(self.sentences):
            base = 5 * s
            pick = lambda words, off: words[digest[(base + off) % len(digest)] % len(words)]
            parts.append("{} {} {} in {} {}, {}.".format(
                pick(_STUB_OPENERS, 0), pick(_STUB_QUALITIES, 1), pick(_STUB_SYMPTOMS, 2),
                pick(_STUB_SITES, 3), pick(_STUB_COURSES, 4),
                _STUB_MODIFIERS[digest[(base + s) % len(digest)] % len(_STUB_MODIFIERS)]))
        return " ".join(parts), {"provider": "stub", "stub_seed": self.seed}


def stub_chat_client(seed: int = 0) -> StubChatClient:
    return StubChatClient(seed=seed)


class HttpChatClient(ChatClient):
    """Remote chat-completions provider. The endpoint URL comes from
    LLM_ENDPOINT and the bearer token from LLM_API_KEY; neither is ever read
    from config files."""

    def __init__(self, endpoint: str | None = None, timeout: float = 120.0):
        endpoint = endpoint or os.environ.get("LLM_ENDPOINT", "")
        if not endpoint:
            raise RunnerError("no chat endpoint: set LLM_ENDPOINT")
        self.endpoint = endpoint
        self.timeout = timeout

    def complete(self, messages: list[dict], params: LlmParams, call_index: int) -> tuple[str, dict]:
        payload = dict(params.to_payload())
        payload["messages"] = messages
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get("LLM_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        resp = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
        if resp.status_code != 200:
            raise RunnerError(f"chat endpoint returned {resp.status_code}: {resp.text[:200]}")
        doc = resp.json()
        if "choices" in doc:
            text = doc["choices"][0]["message"]["content"]
        elif "text" in doc:
            text = doc["text"]
        else:
            raise RunnerError("chat response carries no generated text")
        meta = {"provider": "http"}
        for key in ("model", "system_fingerprint", "id"):
            if key in doc:
                meta[key] = doc[key]
        return text, meta


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def run_batch(bundle: PromptBundle, params: LlmParams, n_calls: int,
              client: ChatClient, store: RunStore,
              retry: RetryPolicy = RetryPolicy(),
              max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
              min_delay: float = 0.0,
              sleep: Callable[[float], None] = time.sleep) -> list[RunRecord]:
    """Bring (case, strategy) up to n_calls persisted successes.

    Returns all records for the tuple range [0, n_calls), previously persisted
    ones included. A call that exhausts its retries is persisted as a failed
    record and the batch continues; callers decide the exit status from the
    failed count.
    """
    if n_calls < 1:
        raise RunnerError(f"n_calls must be >= 1, got {n_calls}")
    prompt_hash = bundle.content_hash()
    existing = {key[3]: record for key, record in store.load().items()
                if record.case_id == bundle.target_case_id
                and record.strategy == bundle.strategy and key[3] < n_calls}
    pending = [i for i in range(n_calls) if not (i in existing and existing[i].ok)]

    def one_call(call_index: int) -> RunRecord:
        messages = bundle.messages()
        try:
            text, meta = with_retries(
                lambda: client.complete(messages, params, call_index),
                policy=retry,
                what=f"chat call {bundle.target_case_id}/{bundle.strategy}/{call_index}",
                sleep=sleep)
            record = RunRecord(
                run_id=store.run_id, case_id=bundle.target_case_id,
                strategy=bundle.strategy, call_index=call_index,
                prompt_hash=prompt_hash, generated_text=text,
                timestamp=_now_iso(), provider_metadata=meta, ok=True)
        except RuntimeError as exc:
            record = RunRecord(
                run_id=store.run_id, case_id=bundle.target_case_id,
                strategy=bundle.strategy, call_index=call_index,
                prompt_hash=prompt_hash, generated_text="",
                timestamp=_now_iso(), provider_metadata={"error": str(exc)}, ok=False)
        store.append(record)
        return record

    results: dict[int, RunRecord] = dict(existing)
    if max_in_flight <= 1 or min_delay > 0:
        for n, idx in enumerate(pending):
            if min_delay > 0 and n:
                sleep(min_delay)
            results[idx] = one_call(idx)
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            for record in pool.map(one_call, pending):
                results[record.call_index] = record

    failed = sum(1 for r in results.values() if not r.ok)
    if failed:
        log.warning("run %s %s/%s: %d of %d calls failed", store.run_id,
                    bundle.target_case_id, bundle.strategy, failed, n_calls)
    return [results[i] for i in range(n_calls)]
