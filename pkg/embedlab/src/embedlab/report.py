"""Projection reports: noun tokens of sampled generations vs. ground truth.

Reads the generation pipeline's record file (JSON lines, one record per chat
call) and corpus file directly; the only other coupling to the pipeline is
the /embed_tokens wire protocol when an HTTP embedder is used.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pos import extract_nouns
from .projection import umap_project


class ReportError(Exception):
    pass


@dataclass(frozen=True)
class ProjectionPoint:
    token: str
    source: str            # "ground_truth" or "generated"
    strategy: str          # empty for ground truth rows
    x: float
    y: float


def _load_records(run_store: str | Path) -> list[dict]:
    path = Path(run_store)
    if path.is_dir():
        path = path / "records.jsonl"
    if not path.is_file():
        raise ReportError(f"no run records at {path}")
    latest: dict[tuple, dict] = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            latest[(rec["case_id"], rec["strategy"], rec["call_index"])] = rec
    return [rec for rec in latest.values()
            if rec.get("ok") and rec.get("generated_text", "").strip()]


def _load_ground_truth(ground_truth) -> dict[str, str]:
    if isinstance(ground_truth, dict):
        return dict(ground_truth)
    path = Path(ground_truth)
    if not path.is_file():
        raise ReportError(f"no corpus file at {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    return {case["case_id"]: case["note_text"] for case in doc["cases"]}


def _noun_vectors(text: str, embedder) -> tuple[list[str], list[np.ndarray]]:
    """One vector per NOUN/PROPN word: the mean of the word's own token
    embeddings."""
    tokens, vectors = [], []
    for word in extract_nouns(text):
        payload = embedder.embed_tokens(word)
        if len(payload.tokens) == 0:
            continue
        tokens.append(word)
        vectors.append(np.asarray(payload.vectors, dtype=np.float64).mean(axis=0))
    return tokens, vectors


def build_projection_report(run_store, ground_truth, embedder, out_dir,
                            sample_count: int = 5, seed: int = 1,
                            n_neighbors: int = 15, min_dist: float = 0.1,
                            random_state: int = 1) -> list[Path]:
    """For each of sample_count seeded (case, call) samples, projects the
    noun tokens of the ground-truth note and of every strategy's generation
    to 2-D jointly, and writes one CSV and one SVG per sample. Returns the
    CSV paths."""
    records = _load_records(run_store)
    truth = _load_ground_truth(ground_truth)

    by_case: dict[str, dict[str, dict[int, str]]] = {}
    for rec in records:
        if rec["case_id"] not in truth:
            continue
        by_case.setdefault(rec["case_id"], {}) \
            .setdefault(rec["strategy"], {})[rec["call_index"]] = rec["generated_text"]
    if not by_case:
        raise ReportError("no successful records overlap the ground truth cases")

    rng = np.random.default_rng(seed)
    case_ids = sorted(by_case)
    take = min(sample_count, len(case_ids))
    chosen = [case_ids[i] for i in
              sorted(rng.choice(len(case_ids), size=take, replace=False).tolist())]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for case_id in chosen:
        strategies = sorted(by_case[case_id])
        shared = set.intersection(*(set(by_case[case_id][s]) for s in strategies))
        if not shared:
            raise ReportError(f"case {case_id} has no call index common to "
                              f"all strategies")
        call_index = sorted(shared)[int(rng.integers(0, len(shared)))]

        labels: list[tuple[str, str, str]] = []
        vectors: list[np.ndarray] = []
        toks, vecs = _noun_vectors(truth[case_id], embedder)
        labels += [(t, "ground_truth", "") for t in toks]
        vectors += vecs
        for strategy in strategies:
            toks, vecs = _noun_vectors(by_case[case_id][strategy][call_index],
                                       embedder)
            labels += [(t, "generated", strategy) for t in toks]
            vectors += vecs
        if len(vectors) < 2:
            raise ReportError(f"case {case_id} yields too few noun tokens "
                              f"to project")

        k = min(n_neighbors, len(vectors) - 1)
        coords = umap_project(np.vstack(vectors), n_neighbors=k,
                              min_dist=min_dist, random_state=random_state)
        points = [ProjectionPoint(token=t, source=src, strategy=strat,
                                  x=float(xy[0]), y=float(xy[1]))
                  for (t, src, strat), xy in zip(labels, coords)]

        stem = f"projection_{case_id}_{call_index}"
        csv_path = out / f"{stem}.csv"
        with csv_path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["token", "source", "strategy", "x", "y"])
            for p in points:
                writer.writerow([p.token, p.source, p.strategy,
                                 format(p.x, ".6g"), format(p.y, ".6g")])
        _plot(points, out / f"{stem}.svg", case_id)
        written.append(csv_path)
    return written


def _plot(points: list[ProjectionPoint], path: Path, case_id: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 6))
    groups = sorted({(p.source, p.strategy) for p in points})
    for source, strategy in groups:
        xs = [p.x for p in points if (p.source, p.strategy) == (source, strategy)]
        ys = [p.y for p in points if (p.source, p.strategy) == (source, strategy)]
        label = source if source == "ground_truth" else strategy
        marker = "*" if source == "ground_truth" else "o"
        ax.scatter(xs, ys, label=label, marker=marker, alpha=0.8)
    ax.set_title(f"Noun token projection: {case_id}")
    ax.legend(fontsize=8)
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
