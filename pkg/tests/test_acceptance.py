"""Acceptance gate: the shipped guarantees, one printed verdict line each.

Every check here is self-contained and offline except the final live
reproduction, which is skipped (not failed) unless the environment provides
real corpus assets and an embedding endpoint.
"""

import math
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from notegen.cli import main as cli_main
from notegen.corpus import ClinicalCase, attach_demographics, ingest_corpus, split_corpus
from notegen.embedding import EmbeddingIndex, HashEmbeddingProvider, HttpEmbeddingProvider, cosine_distance
from notegen.metrics import bootstrap_ci, box_stats, kde, kde_peak
from notegen.prompts import STRATEGIES, build_prompt, uses_kg, uses_retrieval
from notegen.runner import LlmParams, RunStore, StubChatClient, run_batch
from notegen.snomed import load_release, render_kg_fragment

from testdata import CASE_A, CASE_E, SNOMED_DESC, SNOMED_MAP, SNOMED_OWL


@pytest.fixture
def criterion(request):
    """One [PASS]/[FAIL]/[SKIP] line per acceptance criterion, written through
    pytest's terminal reporter so capture never swallows the verdicts."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(word: str, name: str, statement: str) -> None:
        line = f"[{word}] {name}: {statement}"
        if reporter is not None:
            reporter.ensure_newline()
            reporter.write_line(line)
        else:
            print(line, file=sys.__stderr__, flush=True)

    @contextmanager
    def check(name: str, statement: str):
        try:
            yield
        except BaseException as exc:
            skipped = exc.__class__.__name__ in ("Skipped", "SkipTest")
            emit("SKIP" if skipped else "FAIL", name, statement)
            raise
        emit("PASS", name, statement)

    return check


def _oracle_cosine(u, v) -> float:
    dot = math.fsum(x * y for x, y in zip(u, v))
    nu = math.sqrt(math.fsum(x * x for x in u))
    nv = math.sqrt(math.fsum(y * y for y in v))
    return 1.0 - dot / (nu * nv)


def test_p1_cosine_oracle(criterion):
    with criterion("P1", "cosine distance matches the independent oracle within "
                         "1e-12 on 1000 pairs, dims 2-512, in < 5 s"):
        start = time.monotonic()
        rng = np.random.default_rng(42)
        for _ in range(1000):
            dim = int(rng.integers(2, 513))
            u = rng.standard_normal(dim)
            v = rng.standard_normal(dim)
            d = cosine_distance(u, v)
            assert abs(d - _oracle_cosine(u, v)) <= 1e-12
            assert abs(d - cosine_distance(v, u)) <= 1e-12
            c = float(rng.uniform(0.1, 10.0))
            assert cosine_distance(u, c * u) <= 1e-12
        assert time.monotonic() - start < 5.0


def test_p2_exact_retrieval(criterion):
    with criterion("P2", "index search equals brute-force ranking, ties included, "
                         "for 50 queries over 200 cases in < 5 s"):
        start = time.monotonic()
        rng = np.random.default_rng(7)
        words = ["fever", "cough", "pain", "nausea", "rash", "fatigue", "edema",
                 "tremor", "vertigo", "pallor"]

        def sentence():
            return " ".join(rng.choice(words, size=6))

        texts = [sentence() for _ in range(170)]
        texts += [texts[int(rng.integers(0, 170))] for _ in range(30)]  # forced ties
        cases = [ClinicalCase(case_id=f"case{i:03d}", note_text=t)
                 for i, t in enumerate(texts)]
        provider = HashEmbeddingProvider(dim=48, seed=3)
        idx = EmbeddingIndex.build(cases, provider)

        entries = [(c.case_id, provider.embed([c.note_text])[0]) for c in cases]
        queries = [sentence() for _ in range(20)]
        queries += [texts[int(rng.integers(0, 200))] for _ in range(30)]
        for q in queries:
            qv = provider.embed([q])[0]
            ranked = sorted(((-(1.0 - _oracle_cosine(qv, vec)), cid)
                             for cid, vec in entries))[:10]
            hits = idx.search(q, k=10)
            assert [h.case_id for h in hits] == [cid for _, cid in ranked]
            for h, (neg_rel, _) in zip(hits, ranked):
                assert abs(h.relatedness - (-neg_rel)) <= 1e-12
        assert time.monotonic() - start < 5.0


def test_p3_kg_fragment_reproduction(criterion):
    with criterion("P3", "K08.109 knowledge-graph fragment carries all five "
                         "expected concepts and renders byte-identically"):
        frags = []
        for _ in range(2):
            graph = load_release(SNOMED_MAP, SNOMED_OWL, SNOMED_DESC)
            frags.append(render_kg_fragment(graph, ["K08.109"]))
        assert frags[0] == frags[1]
        assert frags[0].encode() == frags[1].encode()
        for needle in ("Edentulous (finding)", "278650002",
                       "Role group", "609096000",
                       "Tooth presence", "278652005",
                       "Absent", "2667000",
                       "All teeth", "1162715001"):
            assert needle in frags[0], needle


def _example_count(user_text: str) -> int:
    return sum(1 for line in user_text.splitlines()
               if line.startswith("Example ") and line.rstrip().endswith(":"))


def test_p4_prompt_contracts(criterion, cases_by_id, fixture_index, kg_graph, corpus_cases):
    with criterion("P4", "per-strategy prompt contracts hold and the target note "
                         "never leaks into its own prompt"):
        case = cases_by_id["S1130-05582017000100031-1"]
        hits = fixture_index.query_for_case(case, "icd_codes", k=10)
        example_texts = {c.case_id: c.note_text for c in corpus_cases}
        fragment = render_kg_fragment(kg_graph, case.icd_codes)
        expected_examples = {"baseline_one_shot": 1, "cot_ss": 10,
                             "cot_kg": 0, "cot_ss_kg": 10}
        for strategy in STRATEGIES:
            bundle = build_prompt(
                strategy, case,
                hits=hits if (uses_retrieval(strategy)
                              or strategy == "baseline_one_shot") else None,
                example_texts=example_texts,
                kg_fragment=fragment if uses_kg(strategy) else None)
            assert _example_count(bundle.user_text) == expected_examples[strategy]
            assert ("Clinical knowledge:" in bundle.user_text) == uses_kg(strategy)
            assert bool(bundle.example_case_ids) == uses_retrieval(strategy)
            assert bool(bundle.kg_codes) == uses_kg(strategy)
            assert case.note_text not in bundle.user_text
            assert case.case_id not in bundle.example_case_ids


def _bundles(corpus_split, cases_by_id, fixture_index, kg_graph, corpus_cases):
    example_texts = {c.case_id: c.note_text for c in corpus_cases}
    out = []
    for cid in corpus_split.test_pool:
        case = cases_by_id[cid]
        hits = fixture_index.query_for_case(case, "icd_codes", k=10)
        fragment = render_kg_fragment(kg_graph, case.icd_codes)
        for strategy in STRATEGIES:
            out.append(build_prompt(
                strategy, case,
                hits=hits if (uses_retrieval(strategy)
                              or strategy == "baseline_one_shot") else None,
                example_texts=example_texts,
                kg_fragment=fragment if uses_kg(strategy) else None))
    return out


def test_p5_run_protocol(criterion, tmp_path, corpus_split, cases_by_id, fixture_index,
                         kg_graph, corpus_cases):
    with criterion("P5", "6 cases x 4 strategies x 25 stub calls persist exactly "
                         "600 records; resume issues only the missing calls; "
                         "payloads are stateless; < 30 s"):
        start = time.monotonic()
        bundles = _bundles(corpus_split, cases_by_id, fixture_index, kg_graph,
                           corpus_cases)
        assert len(bundles) == 24
        params = LlmParams()

        store = RunStore(tmp_path / "runs", "full")
        client = StubChatClient(seed=11)
        for bundle in bundles:
            records = run_batch(bundle, params, 25, client, store)
            assert len(records) == 25 and all(r.ok for r in records)
        lines = store.records_path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 600
        assert len(store.load()) == 600

        # interrupt after 11 calls per bundle, then resume to 25
        store2 = RunStore(tmp_path / "runs", "resumed")
        first = StubChatClient(seed=11)
        for bundle in bundles:
            run_batch(bundle, params, 11, first, store2)
        resumer = StubChatClient(seed=11)
        for bundle in bundles:
            before = len(resumer.calls)
            records = run_batch(bundle, params, 25, resumer, store2)
            issued = resumer.calls[before:]
            assert {c["call_index"] for c in issued} == set(range(11, 25))
            assert len(records) == 25
            # statelessness: every wire payload is exactly the static prompt
            for call in issued:
                assert call["messages"] == bundle.messages()
                assert [m["role"] for m in call["messages"]] == ["system", "user"]
        assert len(resumer.calls) == 24 * 14
        assert len(store2.load()) == 600
        assert time.monotonic() - start < 30.0


def test_p6_statistics_suite(criterion):
    with criterion("P6", "bootstrap coverage 95% +/- 3% over 500 trials; KDE "
                         "integrates to 1 +/- 0.01; box stats match hand values; "
                         "a -0.05 shift moves the KDE peak left; < 60 s"):
        start = time.monotonic()

        rng = np.random.default_rng(2024)
        hit = 0
        for trial in range(500):
            samples = rng.normal(0.5, 0.1, size=100)
            low, high = bootstrap_ci(list(samples), level=0.95, resamples=1000,
                                     seed=trial)
            hit += int(low <= 0.5 <= high)
        coverage = hit / 500
        assert abs(coverage - 0.95) <= 0.03, f"coverage {coverage}"

        samples = list(rng.normal(0.5, 0.1, size=500))
        grid = np.linspace(-0.5, 1.5, 4001)
        dens = kde(samples, grid)
        assert abs(float(np.trapezoid(dens, grid)) - 1.0) <= 0.01

        stats = box_stats(list(range(1, 10)))
        assert (stats["median"], stats["q1"], stats["q3"], stats["iqr"]) == (5, 3, 7, 4)
        stats = box_stats([0, 0, 0, 0, 100])
        assert stats["outliers"] == [100.0]

        base = np.clip(rng.normal(0.62, 0.08, size=400), 0.0, 2.0)
        shifted = base - 0.05
        peak_grid = np.linspace(0.0, 1.0, 2001)
        assert kde_peak(list(shifted), peak_grid) < kde_peak(list(base), peak_grid)

        assert time.monotonic() - start < 60.0


def test_p7_end_to_end_determinism(criterion, write_config, tmp_path):
    with criterion("P7", "two full stub-pipeline executions produce byte-identical "
                         "distances.csv and summary.csv"):
        runner = CliRunner()
        blobs = []
        for tag in ("first", "second"):
            work = tmp_path / tag
            cfg = write_config(work=work)
            for cmd in ("ingest", "index", "build-kg", "generate", "evaluate"):
                result = runner.invoke(cli_main, ["--config", str(cfg), cmd])
                assert result.exit_code == 0, f"{tag} {cmd}: {result.output}"
            blobs.append({name: (work / "report" / name).read_bytes()
                          for name in ("distances.csv", "summary.csv")})
        assert blobs[0]["distances.csv"] == blobs[1]["distances.csv"]
        assert blobs[0]["summary.csv"] == blobs[1]["summary.csv"]


_LIVE_VARS = ("LLM_ENDPOINT", "NOTEGEN_EMBED_MODEL", "NOTEGEN_CODIESP_NOTES",
              "NOTEGEN_CODIESP_ANNOTATIONS", "NOTEGEN_TEST_IDS")


def test_p8_live_retrieval_reproduction(criterion):
    with criterion("P8", "live Case A top-1 relatedness 0.762 +/- 0.02 and "
                         "Case E 0.846 +/- 0.02 (skipped without live assets)"):
        missing = [v for v in _LIVE_VARS if not os.environ.get(v)]
        if missing:
            pytest.skip(f"live assets absent; set {', '.join(missing)} to enable")

        notes = Path(os.environ["NOTEGEN_CODIESP_NOTES"])
        annotations = Path(os.environ["NOTEGEN_CODIESP_ANNOTATIONS"])
        ids_file = Path(os.environ["NOTEGEN_TEST_IDS"])
        cases = ingest_corpus(notes, annotations)
        demo = os.environ.get("NOTEGEN_CODIESP_DEMOGRAPHICS")
        if demo:
            attach_demographics(cases, Path(demo))
        test_ids = [line.strip() for line in
                    ids_file.read_text(encoding="utf-8").splitlines() if line.strip()]
        split = split_corpus(cases, test_ids)
        by_id = {c.case_id: c for c in cases}

        provider = HttpEmbeddingProvider(os.environ["LLM_ENDPOINT"],
                                         os.environ["NOTEGEN_EMBED_MODEL"])
        idx = EmbeddingIndex.build([by_id[cid] for cid in split.index_pool], provider)
        for cid, expected in ((CASE_A, 0.762), (CASE_E, 0.846)):
            hits = idx.query_for_case(by_id[cid], "icd_codes", k=1)
            assert hits, f"no hits for {cid}"
            assert abs(hits[0].relatedness - expected) <= 0.02, (
                f"{cid}: top-1 relatedness {hits[0].relatedness:.3f}, "
                f"expected {expected} +/- 0.02")
