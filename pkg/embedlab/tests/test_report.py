"""Projection reports built from a pipeline-format record file."""

import csv
import json
import math
from pathlib import Path

import pytest

from embedlab import ReportError, build_projection_report

GROUND_TRUTH = {
    "case01": "The patient reported severe toothache and jaw swelling.",
    "case02": "Chronic cough with fever and chest discomfort.",
    "case03": "Examination showed dyspnea and marked tenderness.",
    "case04": "The woman described persistent headache and nausea.",
    "case05": "Biopsy confirmed an ulcer with mild bleeding.",
}

GENERATED = {
    "case01": "A woman presented with toothache and swelling of the jaw.",
    "case02": "The man reported cough, fever and discomfort.",
    "case03": "Patient developed dyspnea and leg tenderness.",
    "case04": "She described headache with nausea and vomiting.",
    "case05": "An ulcer with bleeding was confirmed on biopsy.",
}


def _record(case_id, strategy, call_index, text, ok=True):
    return {
        "run_id": "run-1",
        "case_id": case_id,
        "strategy": strategy,
        "call_index": call_index,
        "prompt_hash": "0" * 12,
        "generated_text": text,
        "timestamp": "2026-01-01T00:00:00+00:00",
        "provider_metadata": {},
        "ok": ok,
    }


@pytest.fixture
def run_store(tmp_path):
    records = []
    for case_id, text in GENERATED.items():
        calls = [0] if case_id == "case03" else [0, 1]
        for strategy in ("baseline_one_shot", "cot_kg"):
            for call_index in calls:
                records.append(_record(case_id, strategy, call_index, text))
    # superseded attempt: a later line for the same key replaces it
    records.insert(0, _record("case03", "baseline_one_shot", 0,
                              "Colon lesion with anemia."))
    # failed and blank generations never reach a report
    records.append(_record("case01", "baseline_one_shot", 2, "boom", ok=False))
    records.append(_record("case02", "cot_kg", 2, "   "))
    records.append(_record("case99", "baseline_one_shot", 0,
                           "Ghost case without ground truth."))
    store = tmp_path / "store"
    store.mkdir()
    with (store / "records.jsonl").open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return store


def _read(csv_path: Path):
    with csv_path.open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_sampling_is_seeded_and_output_deterministic(run_store, encoder, tmp_path):
    first = build_projection_report(run_store, GROUND_TRUTH, encoder,
                                    tmp_path / "a", sample_count=2, seed=4)
    second = build_projection_report(run_store, GROUND_TRUTH, encoder,
                                     tmp_path / "b", sample_count=2, seed=4)
    assert [p.name for p in first] == [p.name for p in second]
    for pa, pb in zip(first, second):
        assert pa.read_bytes() == pb.read_bytes()


def test_full_sample_structure(run_store, encoder, tmp_path):
    out = tmp_path / "report"
    paths = build_projection_report(run_store, GROUND_TRUTH, encoder, out,
                                    sample_count=5)
    assert len(paths) == 5
    assert sorted(p.name.split("_")[1] for p in paths) == sorted(GROUND_TRUTH)
    for csv_path in paths:
        assert csv_path.with_suffix(".svg").is_file()
        header, rows = _read(csv_path)
        assert header == ["token", "source", "strategy", "x", "y"]
        sources = {row[1] for row in rows}
        assert sources == {"ground_truth", "generated"}
        strategies = {row[2] for row in rows if row[1] == "generated"}
        assert strategies == {"baseline_one_shot", "cot_kg"}
        assert all(row[2] == "" for row in rows if row[1] == "ground_truth")
        for row in rows:
            assert math.isfinite(float(row[3]))
            assert math.isfinite(float(row[4]))


def test_latest_record_wins(run_store, encoder, tmp_path):
    paths = build_projection_report(run_store, GROUND_TRUTH, encoder,
                                    tmp_path / "r", sample_count=5)
    case03 = next(p for p in paths if "case03" in p.name)
    assert case03.name == "projection_case03_0.csv"
    _, rows = _read(case03)
    baseline_tokens = {row[0] for row in rows
                       if row[2] == "baseline_one_shot"}
    assert "dyspnea" in baseline_tokens
    assert "lesion" not in baseline_tokens


def test_corpus_file_ground_truth(run_store, encoder, tmp_path):
    corpus = tmp_path / "corpus.json"
    corpus.write_text(json.dumps({
        "cases": [{"case_id": cid, "note_text": text}
                  for cid, text in GROUND_TRUTH.items()],
    }), encoding="utf-8")
    via_file = build_projection_report(run_store, corpus, encoder,
                                       tmp_path / "f", sample_count=2)
    via_dict = build_projection_report(run_store, GROUND_TRUTH, encoder,
                                       tmp_path / "d", sample_count=2)
    assert [p.read_bytes() for p in via_file] == [p.read_bytes() for p in via_dict]


def test_missing_records_rejected(encoder, tmp_path):
    with pytest.raises(ReportError, match="no run records"):
        build_projection_report(tmp_path / "empty", GROUND_TRUTH, encoder,
                                tmp_path / "out")


def test_disjoint_ground_truth_rejected(run_store, encoder, tmp_path):
    with pytest.raises(ReportError, match="overlap"):
        build_projection_report(run_store, {"other": "Unrelated note."},
                                encoder, tmp_path / "out")
