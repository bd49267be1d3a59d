"""Shared fixtures: the bundled corpus, SNOMED mini-release, and config factory."""

from pathlib import Path

import pytest

from testdata import CORPUS, SNOMED_DESC, SNOMED_MAP, SNOMED_OWL, TEST_IDS

from notegen.corpus import attach_demographics, ingest_corpus, split_corpus
from notegen.embedding import EmbeddingIndex, HashEmbeddingProvider
from notegen.snomed import load_release


@pytest.fixture(scope="session")
def corpus_cases():
    cases = ingest_corpus(CORPUS / "notes", CORPUS / "annotations.tsv")
    attach_demographics(cases, CORPUS / "demographics.tsv")
    return cases


@pytest.fixture(scope="session")
def corpus_split(corpus_cases):
    return split_corpus(corpus_cases, TEST_IDS)


@pytest.fixture(scope="session")
def cases_by_id(corpus_cases):
    return {c.case_id: c for c in corpus_cases}


@pytest.fixture(scope="session")
def kg_graph():
    return load_release(SNOMED_MAP, SNOMED_OWL, SNOMED_DESC)


@pytest.fixture(scope="session")
def fixture_index(cases_by_id, corpus_split):
    pool = [cases_by_id[cid] for cid in corpus_split.index_pool]
    return EmbeddingIndex.build(pool, HashEmbeddingProvider(dim=32, seed=0))


@pytest.fixture
def write_config(tmp_path):
    """Factory for a pipeline INI pointing at the bundled fixtures, with all
    outputs under tmp_path."""

    def _write(work: Path | None = None, **options) -> Path:
        work = work or tmp_path / "work"
        sections = {
            "paths": {
                "notes_dir": str(CORPUS / "notes"),
                "annotations_file": str(CORPUS / "annotations.tsv"),
                "demographics_file": str(CORPUS / "demographics.tsv"),
                "snomed_map_file": str(SNOMED_MAP),
                "snomed_owl_file": str(SNOMED_OWL),
                "snomed_descriptions_file": str(SNOMED_DESC),
                "corpus_file": str(work / "corpus.json"),
                "index_file": str(work / "index.json"),
                "kg_file": str(work / "kg.json"),
                "run_dir": str(work / "runs"),
                "report_dir": str(work / "report"),
            },
            "corpus": {"test_ids": ", ".join(TEST_IDS)},
            "embedding": {"provider": "hash", "dim": "32", "seed": "0"},
            "generation": {
                "provider": "stub",
                "stub_seed": "7",
                "run_id": "run1",
                "n_calls": "3",
                "strategies": "baseline_one_shot, cot_ss, cot_kg, cot_ss_kg",
            },
            "evaluation": {"provider": "stub", "dim": "24", "seed": "1",
                           "resamples": "200"},
        }
        for dotted, value in options.items():
            section, key = dotted.split(".", 1)
            sections.setdefault(section, {})[key] = str(value)
        lines = []
        for section, values in sections.items():
            lines.append(f"[{section}]")
            lines.extend(f"{key} = {value}" for key, value in values.items())
            lines.append("")
        path = tmp_path / "pipeline.ini"
        path.write_text("\n".join(lines), encoding="utf-8")
        return path

    return _write
