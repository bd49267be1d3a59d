"""Embedding service and offline token analyses for generated clinical notes."""

from .encoder import EncoderError, TokenPayload, TransformerEncoder, make_test_model
from .pos import extract_nouns, tag_tokens, tokenize
from .projection import ProjectionError, umap_project
from .report import ProjectionPoint, ReportError, build_projection_report
from .service import ServiceHandle, serve_embeddings, start_service

__all__ = [
    "EncoderError",
    "TokenPayload",
    "TransformerEncoder",
    "make_test_model",
    "extract_nouns",
    "tag_tokens",
    "tokenize",
    "ProjectionError",
    "umap_project",
    "ProjectionPoint",
    "ReportError",
    "build_projection_report",
    "ServiceHandle",
    "serve_embeddings",
    "start_service",
]
