"""Transformer encoder producing per-token and summary embeddings.

Models load from a local directory (config, weights, vocab); nothing is ever
downloaded. Inference runs in eval mode with gradients disabled, so identical
inputs produce identical vectors on a given machine.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class EncoderError(Exception):
    pass


@dataclass(frozen=True)
class TokenPayload:
    tokens: tuple[str, ...]
    vectors: np.ndarray
    summary_vector: np.ndarray
    truncated: bool


def resolve_model(model_name: str) -> Path:
    """A model name is either a local model directory or a subdirectory of
    $EMBEDLAB_MODEL_ROOT."""
    direct = Path(model_name)
    if (direct / "config.json").is_file():
        return direct
    root = os.environ.get("EMBEDLAB_MODEL_ROOT")
    if root:
        nested = Path(root) / model_name
        if (nested / "config.json").is_file():
            return nested
    raise EncoderError(
        f"unknown model {model_name!r}: pass a local model directory or set "
        "EMBEDLAB_MODEL_ROOT to a directory containing it")


class TransformerEncoder:
    """BERT-style encoder. The summary vector is the hidden state at the
    sequence-summary ([CLS]) position; token vectors cover everything between
    the special markers."""

    def __init__(self, model_name: str | Path):
        import torch
        from transformers import BertModel, BertTokenizer
        from transformers.utils import logging as hf_logging

        hf_logging.disable_progress_bar()
        model_dir = resolve_model(str(model_name))
        self._torch = torch
        self.tokenizer = BertTokenizer.from_pretrained(str(model_dir))
        self.model = BertModel.from_pretrained(str(model_dir))
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)
        self.max_length = int(self.model.config.max_position_embeddings)

    def embed_tokens(self, text: str) -> TokenPayload:
        if not text.strip():
            raise EncoderError("cannot embed empty text")
        full = self.tokenizer.encode(text, add_special_tokens=True,
                                     truncation=False)
        truncated = len(full) > self.max_length
        enc = self.tokenizer(text, truncation=True, max_length=self.max_length,
                             return_tensors="pt")
        with self._torch.no_grad():
            out = self.model(**enc)
        hidden = out.last_hidden_state[0].numpy().astype(np.float64)
        ids = enc["input_ids"][0].tolist()
        tokens = tuple(self.tokenizer.convert_ids_to_tokens(ids[1:-1]))
        return TokenPayload(tokens=tokens, vectors=hidden[1:-1],
                            summary_vector=hidden[0], truncated=truncated)

    def embed_texts(self, texts: list[str]) -> list[list[float]]:
        return [self.embed_tokens(t).summary_vector.tolist() for t in texts]


_TEST_WORDS = (
    "patient", "pain", "fever", "cough", "toothache", "teeth", "tooth", "jaw",
    "edentulism", "swelling", "bleeding", "vomiting", "nausea", "headache",
    "history", "presents", "reports", "denies", "describes", "chronic",
    "acute", "mild", "severe", "persistent", "intermittent", "abdominal",
    "chest", "infection", "examination", "treatment", "hospital", "diagnosis",
    "symptoms", "onset", "days", "weeks", "months", "left", "right", "upper",
    "lower", "bilateral", "anemia", "lesion", "biopsy", "ulcer", "colon",
    "jaundice", "dyspnea", "episodes", "discomfort", "tenderness", "year",
    "old", "man", "woman", "male", "female", "with", "without", "and", "the",
    "of", "for", "no", "he", "she", "his", "her", "a", "an", "in", "on", "to",
    "was", "is", "has", "had", "that", "this", "after", "before", "since",
    "reported", "presented", "revealed", "denied", "admitted", "showed",
    "confirmed", "started", "required", "underwent",
)

_TEST_PUNCT = (".", ",", ";", ":", "(", ")", "-", "/")


def make_test_model(path: str | Path, seed: int = 0, hidden_size: int = 32,
                    layers: int = 2, heads: int = 2,
                    max_positions: int = 40) -> Path:
    """Builds a small randomly initialized BERT with a fixed seed and saves it
    as a local model directory, so everything runs without downloaded
    weights. Not a trained model: outputs are meaningful only as a
    deterministic encoder."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizer
    from transformers.utils import logging as hf_logging

    hf_logging.disable_progress_bar()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    letters = [chr(c) for c in range(ord("a"), ord("z") + 1)]
    digits = [str(d) for d in range(10)]
    vocab = list(dict.fromkeys(
        ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        + sorted(_TEST_WORDS) + list(_TEST_PUNCT)
        + letters + digits
        + ["##" + p for p in letters + digits + ["s", "ing", "ed", "ache"]]))
    vocab_file = path / "vocab.txt"
    vocab_file.write_text("\n".join(vocab) + "\n", encoding="utf-8")

    tokenizer = BertTokenizer(str(vocab_file), do_lower_case=True)
    tokenizer.save_pretrained(str(path))

    config = BertConfig(
        vocab_size=len(vocab), hidden_size=hidden_size,
        num_hidden_layers=layers, num_attention_heads=heads,
        intermediate_size=hidden_size * 2,
        max_position_embeddings=max_positions, pad_token_id=0)
    torch.manual_seed(seed)
    model = BertModel(config)
    model.save_pretrained(str(path))
    return path
