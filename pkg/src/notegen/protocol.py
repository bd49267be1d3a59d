"""Wire-protocol contracts shared by every embedding/chat provider.

Any service claiming to implement these endpoints must satisfy the schemas and
shape rules here; the conformance checks are what make the offline stubs and a
live localhost service interchangeable.

POST /embed          {"model", "texts": [str]}  ->  {"dim": int, "vectors": [[float]]}
POST /embed_tokens   {"model", "text"}          ->  {"tokens": [str], "vectors": [[float]],
                                                     "summary_vector": [float], "truncated": bool}
POST <chat endpoint> {"model", "messages", "seed", "temperature", "top_p",
                      "frequency_penalty", "presence_penalty"}
"""

from __future__ import annotations

import jsonschema


class ProtocolError(Exception):
    pass


_NUMBER_ROW = {"type": "array", "items": {"type": "number"}, "minItems": 1}

EMBED_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["model", "texts"],
    "properties": {
        "model": {"type": "string"},
        "texts": {"type": "array", "items": {"type": "string"}, "minItems": 1},
    },
}

EMBED_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["dim", "vectors"],
    "properties": {
        "dim": {"type": "integer", "minimum": 1},
        "vectors": {"type": "array", "items": _NUMBER_ROW},
    },
}

EMBED_TOKENS_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["model", "text"],
    "properties": {
        "model": {"type": "string"},
        "text": {"type": "string"},
    },
}

EMBED_TOKENS_RESPONSE_SCHEMA = {
    "type": "object",
    "required": ["tokens", "vectors", "summary_vector", "truncated"],
    "properties": {
        "tokens": {"type": "array", "items": {"type": "string"}},
        "vectors": {"type": "array", "items": _NUMBER_ROW},
        "summary_vector": _NUMBER_ROW,
        "truncated": {"type": "boolean"},
    },
}

CHAT_REQUEST_SCHEMA = {
    "type": "object",
    "required": ["model", "messages", "seed", "temperature", "top_p",
                 "frequency_penalty", "presence_penalty"],
    "properties": {
        "model": {"type": "string"},
        "messages": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["role", "content"],
                "properties": {
                    "role": {"type": "string"},
                    "content": {"type": "string"},
                },
            },
        },
        "seed": {"type": "integer"},
        "temperature": {"type": "number"},
        "top_p": {"type": "number"},
        "frequency_penalty": {"type": "number"},
        "presence_penalty": {"type": "number"},
    },
}


def _check(doc: dict, schema: dict, what: str) -> None:
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        raise ProtocolError(f"{what} violates protocol: {exc.message}") from exc


def validate_embed_request(doc: dict) -> None:
    _check(doc, EMBED_REQUEST_SCHEMA, "embed request")


def validate_embed_response(doc: dict, n_texts: int) -> None:
    _check(doc, EMBED_RESPONSE_SCHEMA, "embed response")
    if len(doc["vectors"]) != n_texts:
        raise ProtocolError(
            f"embed response has {len(doc['vectors'])} vectors for {n_texts} texts")
    for i, row in enumerate(doc["vectors"]):
        if len(row) != doc["dim"]:
            raise ProtocolError(f"embed response vector {i} has length {len(row)}, "
                                f"declared dim {doc['dim']}")


def validate_embed_tokens_request(doc: dict) -> None:
    _check(doc, EMBED_TOKENS_REQUEST_SCHEMA, "embed_tokens request")


def validate_embed_tokens_response(doc: dict) -> None:
    _check(doc, EMBED_TOKENS_RESPONSE_SCHEMA, "embed_tokens response")
    tokens, vectors = doc["tokens"], doc["vectors"]
    if len(tokens) != len(vectors):
        raise ProtocolError(f"embed_tokens response has {len(tokens)} tokens "
                            f"but {len(vectors)} vectors")
    if vectors:
        dim = len(vectors[0])
        for i, row in enumerate(vectors):
            if len(row) != dim:
                raise ProtocolError(f"embed_tokens vector {i} has length {len(row)}, "
                                    f"expected {dim}")
        if len(doc["summary_vector"]) != dim:
            raise ProtocolError("embed_tokens summary_vector dimension differs "
                                "from token vectors")


def validate_chat_request(doc: dict) -> None:
    _check(doc, CHAT_REQUEST_SCHEMA, "chat request")
