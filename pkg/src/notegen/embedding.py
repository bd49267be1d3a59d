"""Embedding index: pluggable text-embedding providers and exact cosine top-k search.

Search is an exhaustive scan (no approximate structure); at the corpus sizes
this pipeline targets, exactness and determinism matter more than speed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .corpus import ClinicalCase
from .util import RetryPolicy, with_retries

log = logging.getLogger(__name__)

INDEX_FORMAT = "notegen-index/1"
QUERY_MODES = ("icd_codes", "text_references")


class EmbeddingError(Exception):
    pass


def cosine_distance(a, b) -> float:
    """1 - (a.b)/(|a||b|), clamped to [0, 2].

    Raises on dimension mismatch and on zero-norm inputs (undefined angle).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("zero-norm vector: cosine distance is undefined")
    d = 1.0 - float(np.dot(a, b)) / (na * nb)
    return min(2.0, max(0.0, d))


def cosine_similarity(a, b) -> float:
    return 1.0 - cosine_distance(a, b)


class EmbeddingProvider:
    """Maps a batch of texts to fixed-dimension vectors."""

    provider_tag: str

    def embed(self, texts: list[str]) -> np.ndarray:  # (n, dim)
        raise NotImplementedError


def _hash_vector(text: str, dim: int, seed: int) -> np.ndarray:
    """Unit vector derived from a seeded hash; bitwise stable across processes."""
    digest = hashlib.sha256(f"{seed}\x00{text}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class HashEmbeddingProvider(EmbeddingProvider):
    """Deterministic offline stub: seeded hash of the text drives a unit vector.

    Identical (seed, text) pairs give bitwise-identical vectors across
    processes, which makes index builds reproducible byte-for-byte.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self.seed = seed
        self.provider_tag = f"hash-v1/d{dim}/s{seed}"

    def embed(self, texts: list[str]) -> np.ndarray:
        return np.stack([_hash_vector(t, self.dim, self.seed) for t in texts])


class HttpEmbeddingProvider(EmbeddingProvider):
    """Remote provider speaking the /embed wire protocol.

    POST {endpoint}/embed with {"model": str, "texts": [str, ...]};
    expects {"dim": int, "vectors": [[float, ...], ...]}; any non-200
    response is a provider failure.
    """

    def __init__(self, endpoint: str, model: str, timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.timeout = timeout
        self.provider_tag = model

    def embed(self, texts: list[str]) -> np.ndarray:
        resp = requests.post(
            f"{self.endpoint}/embed",
            json={"model": self.model, "texts": list(texts)},
            timeout=self.timeout,
        )
        if resp.status_code != 200:
            raise EmbeddingError(f"embedding provider returned {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        vectors = np.asarray(body["vectors"], dtype=np.float64)
        if vectors.shape != (len(texts), int(body["dim"])):
            raise EmbeddingError(f"provider returned shape {vectors.shape}, expected ({len(texts)}, {body['dim']})")
        return vectors


@dataclass(frozen=True)
class IndexEntry:
    case_id: str
    vector: np.ndarray


@dataclass(frozen=True)
class SearchHit:
    case_id: str
    relatedness: float  # cosine similarity, in [-1, 1]


class EmbeddingIndex:
    """Build-once, read-many vector index over clinical cases."""

    def __init__(self, entries: list[IndexEntry], dim: int, provider_tag: str,
                 provider: EmbeddingProvider | None = None):
        seen = set()
        for e in entries:
            if e.case_id in seen:
                raise EmbeddingError(f"duplicate case id in index: {e.case_id!r}")
            seen.add(e.case_id)
            if e.vector.shape != (dim,):
                raise EmbeddingError(f"entry {e.case_id!r} has dim {e.vector.shape}, index dim {dim}")
            if not np.all(np.isfinite(e.vector)):
                raise EmbeddingError(f"entry {e.case_id!r} has non-finite values")
            if float(np.linalg.norm(e.vector)) == 0.0:
                raise EmbeddingError(f"entry {e.case_id!r} has zero norm")
        self._entries = list(entries)
        self.dim = dim
        self.provider_tag = provider_tag
        self._provider = provider

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> list[IndexEntry]:
        return list(self._entries)

    @classmethod
    def build(cls, cases: list[ClinicalCase], provider: EmbeddingProvider,
              batch_size: int = 64, retry: RetryPolicy = RetryPolicy(),
              sleep=time.sleep) -> "EmbeddingIndex":
        """Embed every case's note text. Provider failures are retried per
        policy; exhausted batches abort the build naming the failed cases."""
        entries: list[IndexEntry] = []
        dim: int | None = None
        for start in range(0, len(cases), batch_size):
            chunk = cases[start:start + batch_size]
            texts = [c.note_text for c in chunk]
            ids = [c.case_id for c in chunk]
            try:
                vectors = with_retries(lambda: provider.embed(texts), retry,
                                       what=f"embedding batch starting at case {ids[0]!r}",
                                       sleep=sleep)
            except RuntimeError as exc:
                raise EmbeddingError(f"failed to embed cases {ids}: {exc}") from exc
            if dim is None:
                dim = int(vectors.shape[1])
            entries.extend(IndexEntry(case_id=i, vector=np.asarray(v, dtype=np.float64))
                           for i, v in zip(ids, vectors))
        if dim is None:
            dim = getattr(provider, "dim", 0) or 2
        return cls(entries, dim=dim, provider_tag=provider.provider_tag, provider=provider)

    def search(self, query_text: str, k: int) -> list[SearchHit]:
        """Top-k by relatedness (cosine similarity), ties broken by case_id."""
        if k < 1:
            raise EmbeddingError(f"k must be >= 1, got {k}")
        if not query_text:
            raise EmbeddingError("query text must be nonempty")
        if not self._entries:
            return []
        if self._provider is None:
            raise EmbeddingError("index loaded without a provider; cannot embed queries")
        q = np.asarray(self._provider.embed([query_text])[0], dtype=np.float64)
        hits = [SearchHit(e.case_id, cosine_similarity(q, e.vector)) for e in self._entries]
        hits.sort(key=lambda h: (-h.relatedness, h.case_id))
        return hits[:k]

    def query_for_case(self, case: ClinicalCase, mode: str, k: int = 10) -> list[SearchHit]:
        """Search using the case's ICD codes or text references, joined ", "."""
        if mode not in QUERY_MODES:
            raise EmbeddingError(f"unknown query mode {mode!r}; expected one of {QUERY_MODES}")
        values = case.icd_codes if mode == "icd_codes" else case.text_references
        if not values:
            raise EmbeddingError(f"case {case.case_id!r} has no {mode}; cannot build query")
        return self.search(", ".join(values), k)

    def save(self, path: str | Path) -> None:
        doc = {
            "format": INDEX_FORMAT,
            "dim": self.dim,
            "provider_tag": self.provider_tag,
            "count": len(self._entries),
            "entries": [{"case_id": e.case_id, "vector": e.vector.tolist()} for e in self._entries],
        }
        Path(path).write_text(json.dumps(doc, ensure_ascii=False, separators=(",", ":")), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, provider: EmbeddingProvider | None = None) -> "EmbeddingIndex":
        path = Path(path)
        if not path.is_file():
            raise EmbeddingError(f"index file not found: {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        if doc.get("format") != INDEX_FORMAT:
            raise EmbeddingError(f"unsupported index format: {doc.get('format')!r}")
        if provider is not None and provider.provider_tag != doc["provider_tag"]:
            raise EmbeddingError(
                f"provider tag mismatch: index built with {doc['provider_tag']!r}, "
                f"got {provider.provider_tag!r}")
        entries = [IndexEntry(case_id=e["case_id"], vector=np.asarray(e["vector"], dtype=np.float64))
                   for e in doc["entries"]]
        if len(entries) != int(doc["count"]):
            raise EmbeddingError(f"index count mismatch: header {doc['count']}, entries {len(entries)}")
        return cls(entries, dim=int(doc["dim"]), provider_tag=doc["provider_tag"], provider=provider)
