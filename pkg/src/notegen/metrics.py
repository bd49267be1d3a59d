"""Quantitative comparison of generated notes against ground truth.

Distances come from a token-embedding provider: the summary-vector cosine
distance ("cls") and the distance between averaged token vectors ("mean").
On top of the per-call distance samples sit percentile-bootstrap confidence
intervals, Gaussian KDE curves, box statistics, and per-token best-match
similarity tables. Report emission is deterministic: the same records produce
byte-identical CSV files.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import requests

from .corpus import ClinicalCase
from .embedding import cosine_distance, cosine_similarity, _hash_vector
from .runner import RunRecord
from .util import fmt_real, stable_hash

log = logging.getLogger(__name__)

METRICS = ("cls", "mean")
BAND_LOW_MAX = 0.3
BAND_HIGH_MIN = 0.6
KDE_BANDWIDTH_FLOOR = 1e-6


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class TokenEmbedding:
    tokens: tuple[str, ...]
    vectors: np.ndarray
    summary_vector: np.ndarray
    truncated: bool = False

    def __post_init__(self):
        if len(self.tokens) != self.vectors.shape[0]:
            raise MetricsError(
                f"token/vector count mismatch: {len(self.tokens)} vs {self.vectors.shape[0]}")
        if self.vectors.size and self.vectors.shape[1] != self.summary_vector.shape[0]:
            raise MetricsError("summary vector dimension differs from token vectors")

    def mean_vector(self) -> np.ndarray:
        if not len(self.tokens):
            raise MetricsError("no tokens to average")
        return self.vectors.mean(axis=0)


class TokenEmbeddingProvider:
    """Per-token vectors plus a sequence-summary vector for one text."""

    def embed_tokens(self, text: str) -> TokenEmbedding:
        raise NotImplementedError


class StubTokenEmbeddingProvider(TokenEmbeddingProvider):
    """Hash-derived vectors: same token, same vector, no model runtime.

    Tokenization is whitespace splitting; texts longer than max_tokens are
    truncated with the flag set, mirroring a real encoder's window limit.
    """

    def __init__(self, dim: int = 64, seed: int = 0, max_tokens: int = 512):
        if dim < 2:
            raise MetricsError(f"dim must be >= 2, got {dim}")
        self.dim = dim
        self.seed = seed
        self.max_tokens = max_tokens

    def embed_tokens(self, text: str) -> TokenEmbedding:
        if not text.strip():
            raise MetricsError("cannot embed empty text")
        tokens = text.split()
        truncated = len(tokens) > self.max_tokens
        tokens = tokens[:self.max_tokens]
        vectors = np.stack([
            _hash_vector(f"tok\x00{tok}", self.dim, self.seed) for tok in tokens])
        summary = _hash_vector(f"sum\x00{' '.join(tokens)}", self.dim, self.seed)
        return TokenEmbedding(tuple(tokens), vectors, summary, truncated)


class HttpTokenEmbeddingProvider(TokenEmbeddingProvider):
    """Remote provider speaking POST {endpoint}/embed_tokens with body
    {"model", "text"} and response {"tokens", "vectors", "summary_vector",
    "truncated"}."""

    def __init__(self, endpoint: str, model: str, timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.timeout = timeout

    def embed_tokens(self, text: str) -> TokenEmbedding:
        if not text.strip():
            raise MetricsError("cannot embed empty text")
        resp = requests.post(f"{self.endpoint}/embed_tokens",
                             json={"model": self.model, "text": text},
                             timeout=self.timeout)
        if resp.status_code != 200:
            raise MetricsError(
                f"embed_tokens endpoint returned {resp.status_code}: {resp.text[:200]}")
        doc = resp.json()
        try:
            tokens = tuple(doc["tokens"])
            vectors = np.asarray(doc["vectors"], dtype=np.float64)
            summary = np.asarray(doc["summary_vector"], dtype=np.float64)
            truncated = bool(doc.get("truncated", False))
        except (KeyError, TypeError, ValueError) as exc:
            raise MetricsError(f"malformed embed_tokens response: {exc}") from exc
        if vectors.ndim != 2 or vectors.shape[0] != len(tokens):
            raise MetricsError(f"embed_tokens returned bad vector shape {vectors.shape}")
        if truncated:
            log.warning("embed_tokens truncated input (%d tokens kept)", len(tokens))
        return TokenEmbedding(tokens, vectors, summary, truncated)


# --- Core statistics -----------------------------------------------------------

def sentence_distances(gt_text: str, gen_text: str,
                       embedder: TokenEmbeddingProvider) -> tuple[float, float]:
    """(summary-vector cosine distance, mean-token-vector cosine distance)."""
    if not gt_text.strip() or not gen_text.strip():
        raise MetricsError("sentence_distances requires two nonempty texts")
    gt = embedder.embed_tokens(gt_text)
    gen = embedder.embed_tokens(gen_text)
    if not gt.tokens or not gen.tokens:
        raise MetricsError("provider returned empty tokenization")
    cls_distance = cosine_distance(gt.summary_vector, gen.summary_vector)
    mean_distance = cosine_distance(gt.mean_vector(), gen.mean_vector())
    return cls_distance, mean_distance


def bootstrap_ci(samples: Sequence[float], level: float = 0.95,
                 resamples: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    data = np.asarray(samples, dtype=np.float64)
    if data.size < 2:
        raise MetricsError(f"bootstrap_ci needs >= 2 samples, got {data.size}")
    if not 0 < level < 1:
        raise MetricsError(f"level must be in (0, 1), got {level}")
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, data.size, size=(resamples, data.size))
    means = data[draws].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    low, high = np.quantile(means, [alpha, 1.0 - alpha])
    return float(low), float(high)


def scott_bandwidth(samples: np.ndarray) -> float:
    sigma = float(np.std(samples, ddof=1)) if samples.size > 1 else 0.0
    return max(samples.size ** (-1.0 / 5.0) * sigma, KDE_BANDWIDTH_FLOOR)


def kde(samples: Sequence[float], grid: Sequence[float],
        bandwidth: float | None = None) -> np.ndarray:
    """Gaussian kernel density estimate evaluated on grid points."""
    # sorted so the density is independent of sample ordering
    data = np.sort(np.asarray(samples, dtype=np.float64))
    if data.size < 2:
        raise MetricsError(f"kde needs >= 2 samples, got {data.size}")
    x = np.asarray(grid, dtype=np.float64)
    if x.size < 2 or np.any(np.diff(x) <= 0):
        raise MetricsError("grid must be strictly increasing with >= 2 points")
    h = scott_bandwidth(data) if bandwidth is None else max(float(bandwidth),
                                                            KDE_BANDWIDTH_FLOOR)
    z = (x[:, None] - data[None, :]) / h
    dens = np.exp(-0.5 * z * z).sum(axis=1) / (data.size * h * np.sqrt(2.0 * np.pi))
    return dens


def kde_peak(samples: Sequence[float], grid: Sequence[float],
             bandwidth: float | None = None) -> float:
    """Grid location of the density maximum (ties -> leftmost)."""
    dens = kde(samples, grid, bandwidth)
    return float(np.asarray(grid, dtype=np.float64)[int(np.argmax(dens))])


def box_stats(samples: Sequence[float]) -> dict:
    """Median, linear-interpolation quartiles, 1.5 IQR whiskers, outliers."""
    data = np.asarray(samples, dtype=np.float64)
    if data.size < 1:
        raise MetricsError("box_stats needs >= 1 sample")
    q1, median, q3 = (float(v) for v in np.quantile(data, [0.25, 0.5, 0.75]))
    iqr = q3 - q1
    fence_low, fence_high = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = data[(data >= fence_low) & (data <= fence_high)]
    whisker_low = float(inside.min()) if inside.size else q1
    whisker_high = float(inside.max()) if inside.size else q3
    outliers = sorted(float(v) for v in data[(data < whisker_low) | (data > whisker_high)])
    return {"median": median, "q1": q1, "q3": q3, "iqr": iqr,
            "whisker_low": whisker_low, "whisker_high": whisker_high,
            "outliers": outliers}


def similarity_band(similarity: float) -> str:
    if similarity < BAND_LOW_MAX:
        return "low"
    if similarity <= BAND_HIGH_MIN:
        return "moderate"
    return "high"


def token_similarity_table(gt_text: str, gen_text: str,
                           embedder: TokenEmbeddingProvider) -> list[tuple[str, str, float, str]]:
    """Best generated-token match per ground-truth token."""
    if not gt_text.strip() or not gen_text.strip():
        raise MetricsError("token_similarity_table requires two nonempty texts")
    gt = embedder.embed_tokens(gt_text)
    gen = embedder.embed_tokens(gen_text)
    if not gt.tokens or not gen.tokens:
        raise MetricsError("provider returned empty tokenization")
    rows = []
    for tok, vec in zip(gt.tokens, gt.vectors):
        sims = [cosine_similarity(vec, gvec) for gvec in gen.vectors]
        best = int(np.argmax(sims))
        rows.append((tok, gen.tokens[best], float(sims[best]), similarity_band(sims[best])))
    return rows


# --- Report assembly -----------------------------------------------------------

@dataclass(frozen=True)
class DistanceSample:
    case_id: str
    strategy: str
    call_index: int
    cls_distance: float
    mean_distance: float

    def get(self, metric: str) -> float:
        return self.cls_distance if metric == "cls" else self.mean_distance


@dataclass(frozen=True)
class MetricSummary:
    strategy: str
    metric: str
    n: int
    mean: float
    ci_low: float
    ci_high: float
    median: float
    q1: float
    q3: float


@dataclass(frozen=True)
class KdeCurve:
    metric: str
    strategy: str
    grid: tuple[float, ...]
    density: tuple[float, ...]


@dataclass
class EvalReport:
    samples: list[DistanceSample]
    summaries: list[MetricSummary]
    kde_curves: list[KdeCurve]
    token_tables: dict[str, list[tuple[str, str, float, str]]]
    strategy_order: tuple[str, ...]


def _child_seed(seed: int, *parts: str) -> int:
    return int(stable_hash({"seed": seed, "parts": parts})[:8], 16)


def evaluate_records(records: Iterable[RunRecord], cases: Mapping[str, ClinicalCase],
                     embedder: TokenEmbeddingProvider, strategies: Sequence[str],
                     case_order: Sequence[str] | None = None,
                     resamples: int = 1000, level: float = 0.95, seed: int = 123,
                     kde_points: int = 256) -> EvalReport:
    """Distances for every successful record, then per-strategy statistics.

    Ordering is fixed (case order, then strategy order, then call index) so the
    emitted report is identical for identical stores.
    """
    by_key: dict[tuple[str, str, int], RunRecord] = {}
    for record in records:
        if not record.ok:
            continue
        by_key[(record.case_id, record.strategy, record.call_index)] = record

    order = list(case_order) if case_order is not None else sorted(
        {key[0] for key in by_key})
    strategies = [s for s in strategies]

    gt_cache: dict[str, str] = {}
    for case_id in order:
        case = cases.get(case_id)
        if case is None:
            log.warning("no ground-truth case %s; its records are skipped", case_id)
            continue
        gt_cache[case_id] = case.note_text

    samples: list[DistanceSample] = []
    for case_id in order:
        if case_id not in gt_cache:
            continue
        for strategy in strategies:
            indices = sorted(idx for cid, strat, idx in by_key
                             if cid == case_id and strat == strategy)
            for idx in indices:
                record = by_key[(case_id, strategy, idx)]
                if not record.generated_text.strip():
                    log.warning("empty generation %s/%s/%d skipped", case_id, strategy, idx)
                    continue
                cls_d, mean_d = sentence_distances(gt_cache[case_id],
                                                   record.generated_text, embedder)
                samples.append(DistanceSample(case_id, strategy, idx, cls_d, mean_d))

    summaries: list[MetricSummary] = []
    kde_curves: list[KdeCurve] = []
    for metric in METRICS:
        pooled = [s.get(metric) for s in samples]
        grid: np.ndarray | None = None
        if len(pooled) >= 2:
            arr = np.asarray(pooled)
            pad = 4.0 * scott_bandwidth(arr)
            grid = np.linspace(arr.min() - pad, arr.max() + pad, kde_points)
        for strategy in strategies:
            vals = [s.get(metric) for s in samples if s.strategy == strategy]
            if not vals:
                continue
            box = box_stats(vals)
            if len(vals) >= 2:
                ci_low, ci_high = bootstrap_ci(
                    vals, level=level, resamples=resamples,
                    seed=_child_seed(seed, strategy, metric))
            else:
                ci_low = ci_high = float(vals[0])
            summaries.append(MetricSummary(
                strategy=strategy, metric=metric, n=len(vals),
                mean=float(np.mean(vals)), ci_low=ci_low, ci_high=ci_high,
                median=box["median"], q1=box["q1"], q3=box["q3"]))
            if grid is not None and len(vals) >= 2:
                dens = kde(vals, grid)
                kde_curves.append(KdeCurve(metric, strategy,
                                           tuple(float(g) for g in grid),
                                           tuple(float(d) for d in dens)))

    token_tables: dict[str, list[tuple[str, str, float, str]]] = {}
    for case_id in order:
        if case_id not in gt_cache:
            continue
        row = next((by_key[(case_id, strategy, idx)]
                    for strategy in strategies
                    for idx in sorted(i for cid, s, i in by_key
                                      if cid == case_id and s == strategy)
                    if by_key[(case_id, strategy, idx)].generated_text.strip()), None)
        if row is not None:
            token_tables[case_id] = token_similarity_table(
                gt_cache[case_id], row.generated_text, embedder)

    return EvalReport(samples=samples, summaries=summaries, kde_curves=kde_curves,
                      token_tables=token_tables, strategy_order=tuple(strategies))


# --- File emission -------------------------------------------------------------

def _write_csv(path: Path, header: list[str], rows: Iterable[list[str]]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow(row)
    except OSError as exc:
        raise MetricsError(f"cannot write report file {path}: {exc}") from exc


def _safe_name(case_id: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "._-" else "_" for ch in case_id)


def emit_report(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Write distances.csv, summary.csv, per-metric KDE CSVs, token tables,
    and static SVG charts. Returns the written paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise MetricsError(f"cannot create report dir {out}: {exc}") from exc
    written: list[Path] = []

    path = out / "distances.csv"
    _write_csv(path,
               ["case_id", "strategy", "call_index", "cls_distance", "mean_distance"],
               ([s.case_id, s.strategy, str(s.call_index),
                 fmt_real(s.cls_distance), fmt_real(s.mean_distance)]
                for s in report.samples))
    written.append(path)

    path = out / "summary.csv"
    _write_csv(path,
               ["strategy", "metric", "mean", "ci_low", "ci_high", "median", "q1", "q3"],
               ([m.strategy, m.metric, fmt_real(m.mean), fmt_real(m.ci_low),
                 fmt_real(m.ci_high), fmt_real(m.median), fmt_real(m.q1), fmt_real(m.q3)]
                for m in report.summaries))
    written.append(path)

    for metric in METRICS:
        curves = [c for c in report.kde_curves if c.metric == metric]
        path = out / f"kde_{metric}.csv"
        if not curves:
            _write_csv(path, ["grid"], [])
            written.append(path)
            continue
        grid = curves[0].grid
        header = ["grid"] + [c.strategy for c in curves]
        rows = ([fmt_real(grid[i])] + [fmt_real(c.density[i]) for c in curves]
                for i in range(len(grid)))
        _write_csv(path, header, rows)
        written.append(path)

    for case_id, rows in report.token_tables.items():
        path = out / f"token_similarity_{_safe_name(case_id)}.csv"
        _write_csv(path, ["gt_token", "best_gen_token", "similarity", "band"],
                   ([gt, gen, fmt_real(sim), band] for gt, gen, sim, band in rows))
        written.append(path)

    written.extend(_emit_plots(report, out))
    return written


def _emit_plots(report: EvalReport, out: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written: list[Path] = []
    for metric in METRICS:
        curves = [c for c in report.kde_curves if c.metric == metric]
        if curves:
            fig, ax = plt.subplots(figsize=(7, 4))
            for c in curves:
                ax.plot(c.grid, c.density, label=c.strategy)
            ax.set_xlabel(f"{metric} cosine distance")
            ax.set_ylabel("density")
            ax.legend()
            path = out / f"kde_{metric}.svg"
            fig.savefig(path, metadata={"Date": None})
            plt.close(fig)
            written.append(path)

        groups = [(strategy, [s.get(metric) for s in report.samples
                              if s.strategy == strategy])
                  for strategy in report.strategy_order]
        groups = [(name, vals) for name, vals in groups if vals]
        if groups:
            fig, ax = plt.subplots(figsize=(7, 4))
            ax.boxplot([vals for _, vals in groups],
                       tick_labels=[name for name, _ in groups])
            ax.set_ylabel(f"{metric} cosine distance")
            ax.tick_params(axis="x", rotation=20)
            path = out / f"box_{metric}.svg"
            fig.savefig(path, metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written
