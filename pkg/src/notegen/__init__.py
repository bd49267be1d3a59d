"""Clinical note generation pipeline: corpus ingestion, embedding retrieval,
SNOMED CT knowledge-graph prompts, batched LLM generation, and
embedding-distance evaluation."""

__version__ = "0.1.0"
