"""Live-service tests: wire-protocol conformance and interchangeability with
the notegen pipeline's HTTP providers."""

import numpy as np
import pytest
import requests

from embedlab import EncoderError, start_service
from notegen.corpus import ClinicalCase
from notegen.embedding import EmbeddingIndex, HttpEmbeddingProvider
from notegen.metrics import HttpTokenEmbeddingProvider, sentence_distances
from notegen.protocol import (
    validate_embed_request,
    validate_embed_response,
    validate_embed_tokens_request,
    validate_embed_tokens_response,
)

CASES = [
    ClinicalCase(case_id="caseA", note_text="Severe tooth pain with swelling.",
                 icd_codes=["K08.109"], text_references=["toothache"]),
    ClinicalCase(case_id="caseB", note_text="Chronic cough and mild fever.",
                 icd_codes=["R05"], text_references=["cough"]),
    ClinicalCase(case_id="caseC", note_text="Abdominal discomfort after treatment.",
                 icd_codes=["R10"], text_references=["abdominal pain"]),
]


def _post(service, route: str, body: dict) -> requests.Response:
    return requests.post(f"{service.url}/{route}", json=body, timeout=30)


def test_interchangeable_with_pipeline_providers(service, tiny_model, criterion):
    with criterion("S1", "service responses satisfy the shared wire protocol and "
                         "drive the pipeline's HTTP providers end to end"):
        model = str(tiny_model)

        # Raw wire check: both routes validate against the shared schemas.
        embed_req = {"model": model, "texts": [c.note_text for c in CASES]}
        validate_embed_request(embed_req)
        resp = _post(service, "embed", embed_req)
        assert resp.status_code == 200
        validate_embed_response(resp.json(), n_texts=len(CASES))

        tok_req = {"model": model, "text": "patient reports pain"}
        validate_embed_tokens_request(tok_req)
        resp = _post(service, "embed_tokens", tok_req)
        assert resp.status_code == 200
        validate_embed_tokens_response(resp.json())

        # The pipeline's document-level provider builds a working index.
        provider = HttpEmbeddingProvider(endpoint=service.url, model=model)
        index = EmbeddingIndex.build(CASES, provider)
        assert len(index) == len(CASES)
        for case in CASES:
            hits = index.search(case.note_text, k=1)
            assert hits[0].case_id == case.case_id
            assert hits[0].relatedness == pytest.approx(1.0, abs=1e-9)

        # The pipeline's token-level provider computes distances.
        tok = HttpTokenEmbeddingProvider(endpoint=service.url, model=model)
        cls_d, mean_d = sentence_distances("patient reports pain",
                                           "patient reports pain", tok)
        assert cls_d == pytest.approx(0.0, abs=1e-9)
        assert mean_d == pytest.approx(0.0, abs=1e-9)
        cls_d, mean_d = sentence_distances("patient reports pain",
                                           "chronic cough and fever", tok)
        assert 0.0 < cls_d <= 2.0
        assert 0.0 < mean_d <= 2.0


def test_http_responses_deterministic(service, tiny_model):
    body = {"model": str(tiny_model), "texts": ["persistent headache"]}
    first = _post(service, "embed", body).json()
    second = _post(service, "embed", body).json()
    assert first == second


def test_embed_tokens_matches_direct_encoder(service, encoder, tiny_model):
    text = "The patient denies fever."
    doc = _post(service, "embed_tokens", {"model": str(tiny_model), "text": text}).json()
    direct = encoder.embed_tokens(text)
    assert tuple(doc["tokens"]) == direct.tokens
    assert doc["truncated"] is False
    np.testing.assert_allclose(np.asarray(doc["vectors"]), direct.vectors,
                               rtol=0, atol=1e-12)
    np.testing.assert_allclose(np.asarray(doc["summary_vector"]),
                               direct.summary_vector, rtol=0, atol=1e-12)


def test_embed_tokens_reports_truncation(service, encoder, tiny_model):
    text = "pain " * (encoder.max_length * 2)
    doc = _post(service, "embed_tokens", {"model": str(tiny_model), "text": text}).json()
    assert doc["truncated"] is True
    assert len(doc["tokens"]) == encoder.max_length - 2


def test_wrong_model_rejected(service):
    resp = _post(service, "embed", {"model": "other-model", "texts": ["hi"]})
    assert resp.status_code == 400
    assert "hosts" in resp.json()["error"]


def test_unknown_route_404(service, tiny_model):
    resp = _post(service, "chat", {"model": str(tiny_model)})
    assert resp.status_code == 404


def test_bad_requests_rejected(service, tiny_model):
    model = str(tiny_model)
    for body in ({"model": model, "texts": []},
                 {"model": model, "texts": ["ok", "  "]},
                 {"model": model},
                 {"texts": ["ok"]},
                 {"model": model, "text": "  "}):
        route = "embed_tokens" if "text" in body else "embed"
        resp = _post(service, route, body)
        assert resp.status_code == 400, body
        assert "error" in resp.json()


def test_unknown_model_fails_before_serving():
    with pytest.raises(EncoderError, match="unknown model"):
        start_service("no-such-model-anywhere")
