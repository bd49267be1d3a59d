"""Encoder behaviour: shapes, determinism, truncation, model resolution."""

import numpy as np
import pytest

from embedlab import EncoderError, TransformerEncoder
from embedlab.encoder import resolve_model

TEXT = "The patient reports severe tooth pain and swelling."


def test_payload_shapes(encoder):
    payload = encoder.embed_tokens(TEXT)
    assert len(payload.tokens) == payload.vectors.shape[0]
    assert payload.vectors.shape[1] == encoder.dim
    assert payload.summary_vector.shape == (encoder.dim,)
    assert payload.truncated is False
    assert "patient" in payload.tokens


def test_deterministic_within_instance(encoder):
    first = encoder.embed_tokens(TEXT)
    second = encoder.embed_tokens(TEXT)
    assert first.tokens == second.tokens
    assert np.array_equal(first.vectors, second.vectors)
    assert np.array_equal(first.summary_vector, second.summary_vector)


def test_deterministic_across_instances(encoder, tiny_model):
    fresh = TransformerEncoder(tiny_model)
    a = encoder.embed_tokens(TEXT)
    b = fresh.embed_tokens(TEXT)
    assert np.array_equal(a.vectors, b.vectors)
    assert np.array_equal(a.summary_vector, b.summary_vector)


def test_truncation_flag(encoder):
    long_text = "pain " * (encoder.max_length * 2)
    payload = encoder.embed_tokens(long_text)
    assert payload.truncated is True
    assert len(payload.tokens) == encoder.max_length - 2


def test_empty_text_rejected(encoder):
    with pytest.raises(EncoderError, match="empty"):
        encoder.embed_tokens("   ")


def test_embed_texts_matches_summary_vectors(encoder):
    texts = ["chest pain", "no fever"]
    rows = encoder.embed_texts(texts)
    assert len(rows) == 2
    for text, row in zip(texts, rows):
        expected = encoder.embed_tokens(text).summary_vector
        assert np.array_equal(np.asarray(row), expected)


def test_resolve_direct_directory(tiny_model):
    assert resolve_model(str(tiny_model)) == tiny_model


def test_resolve_via_model_root(tiny_model, monkeypatch):
    monkeypatch.setenv("EMBEDLAB_MODEL_ROOT", str(tiny_model.parent))
    assert resolve_model(tiny_model.name) == tiny_model
    fresh = TransformerEncoder(tiny_model.name)
    assert fresh.dim > 0


def test_unknown_model_rejected(monkeypatch):
    monkeypatch.delenv("EMBEDLAB_MODEL_ROOT", raising=False)
    with pytest.raises(EncoderError, match="EMBEDLAB_MODEL_ROOT"):
        resolve_model("no-such-model")
