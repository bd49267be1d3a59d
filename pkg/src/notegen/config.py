"""Pipeline configuration: one INI file, sections per concern.

Relative paths resolve against the config file's directory, so a config can
travel with its data. Secrets never live here: the chat endpoint and API key
come from the LLM_ENDPOINT / LLM_API_KEY environment variables.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .embedding import QUERY_MODES, EmbeddingProvider, HashEmbeddingProvider, HttpEmbeddingProvider
from .metrics import HttpTokenEmbeddingProvider, StubTokenEmbeddingProvider, TokenEmbeddingProvider
from .prompts import STRATEGIES, PromptTemplates
from .runner import ChatClient, HttpChatClient, LlmParams, StubChatClient


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    base_dir: Path
    notes_dir: Path
    annotations_file: Path
    demographics_file: Path | None
    snomed_map_file: Path | None
    snomed_owl_file: Path | None
    snomed_descriptions_file: Path | None
    corpus_file: Path
    index_file: Path
    kg_file: Path
    run_dir: Path
    report_dir: Path
    test_ids: list[str] = field(default_factory=list)

    embed_provider: str = "hash"
    embed_endpoint: str = ""
    embed_model: str = ""
    embed_dim: int = 256
    embed_seed: int = 0

    chat_provider: str = "stub"
    stub_seed: int = 0
    run_id: str = "run1"
    n_calls: int = 100
    strategies: list[str] = field(default_factory=lambda: list(STRATEGIES))
    query_mode: str = "icd_codes"
    max_in_flight: int = 4
    min_delay: float = 0.0
    llm: LlmParams = field(default_factory=LlmParams)

    templates: PromptTemplates = field(default_factory=PromptTemplates)
    baseline_example_id: str | None = None

    eval_provider: str = "stub"
    eval_endpoint: str = ""
    eval_model: str = ""
    eval_dim: int = 64
    eval_seed: int = 0
    resamples: int = 1000
    ci_level: float = 0.95
    bootstrap_seed: int = 123

    def make_embedding_provider(self) -> EmbeddingProvider:
        if self.embed_provider == "hash":
            return HashEmbeddingProvider(dim=self.embed_dim, seed=self.embed_seed)
        if self.embed_provider == "http":
            if not self.embed_endpoint or not self.embed_model:
                raise ConfigError("embedding.provider=http requires endpoint and model")
            return HttpEmbeddingProvider(self.embed_endpoint, self.embed_model)
        raise ConfigError(f"unknown embedding provider {self.embed_provider!r}")

    def make_chat_client(self) -> ChatClient:
        if self.chat_provider == "stub":
            return StubChatClient(seed=self.stub_seed)
        if self.chat_provider == "http":
            return HttpChatClient()
        raise ConfigError(f"unknown chat provider {self.chat_provider!r}")

    def make_token_embedder(self) -> TokenEmbeddingProvider:
        if self.eval_provider == "stub":
            return StubTokenEmbeddingProvider(dim=self.eval_dim, seed=self.eval_seed)
        if self.eval_provider == "http":
            if not self.eval_endpoint or not self.eval_model:
                raise ConfigError("evaluation.provider=http requires endpoint and model")
            return HttpTokenEmbeddingProvider(self.eval_endpoint, self.eval_model)
        raise ConfigError(f"unknown evaluation provider {self.eval_provider!r}")


def _split_list(raw: str) -> list[str]:
    return [part.strip() for part in raw.replace("\n", ",").split(",") if part.strip()]


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config {path}: {exc}") from exc

    base = path.parent.resolve()

    def resolve(raw: str) -> Path:
        p = Path(raw)
        return p if p.is_absolute() else base / p

    def get(section: str, option: str, default: str | None = None) -> str:
        if parser.has_option(section, option):
            return parser.get(section, option).strip()
        if default is None:
            raise ConfigError(f"config {path} missing [{section}] {option}")
        return default

    def get_path(section: str, option: str, default: str | None = None) -> Path:
        return resolve(get(section, option, default))

    def get_opt_path(section: str, option: str) -> Path | None:
        raw = get(section, option, "")
        return resolve(raw) if raw else None

    def get_int(section: str, option: str, default: int) -> int:
        raw = get(section, option, str(default))
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {option} must be an integer, got {raw!r}") from exc

    def get_float(section: str, option: str, default: float) -> float:
        raw = get(section, option, str(default))
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {option} must be a number, got {raw!r}") from exc

    test_ids: list[str] = []
    ids_file = get_opt_path("corpus", "test_ids_file")
    if ids_file is not None:
        if not ids_file.is_file():
            raise ConfigError(f"test_ids_file not found: {ids_file}")
        test_ids = [line.strip() for line in
                    ids_file.read_text(encoding="utf-8").splitlines() if line.strip()]
    else:
        test_ids = _split_list(get("corpus", "test_ids", ""))

    strategies = _split_list(get("generation", "strategies", ", ".join(STRATEGIES)))
    for strategy in strategies:
        if strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if not strategies:
        raise ConfigError("generation.strategies must name at least one strategy")

    query_mode = get("generation", "query_mode", "icd_codes")
    if query_mode not in QUERY_MODES:
        raise ConfigError(f"unknown query_mode {query_mode!r}; expected one of {QUERY_MODES}")

    n_calls = get_int("generation", "n_calls", 100)
    if n_calls < 1:
        raise ConfigError(f"generation.n_calls must be >= 1, got {n_calls}")

    llm = LlmParams(
        model=get("llm", "model", "gpt-4"),
        seed=get_int("llm", "seed", 123),
        temperature=get_float("llm", "temperature", 0.0),
        top_p=get_float("llm", "top_p", 0.000001),
        frequency_penalty=get_float("llm", "frequency_penalty", 0.0),
        presence_penalty=get_float("llm", "presence_penalty", 0.0),
    )

    templates = PromptTemplates().with_overrides(
        system_text=get("prompt", "system_text", "") or None,
        instruction=get("prompt", "instruction", "") or None,
        example_header=get("prompt", "example_header", "") or None,
        kg_header=get("prompt", "kg_header", "") or None,
        final_directive=get("prompt", "final_directive", "") or None,
    )

    return PipelineConfig(
        base_dir=base,
        notes_dir=get_path("paths", "notes_dir"),
        annotations_file=get_path("paths", "annotations_file"),
        demographics_file=get_opt_path("paths", "demographics_file"),
        snomed_map_file=get_opt_path("paths", "snomed_map_file"),
        snomed_owl_file=get_opt_path("paths", "snomed_owl_file"),
        snomed_descriptions_file=get_opt_path("paths", "snomed_descriptions_file"),
        corpus_file=get_path("paths", "corpus_file", "work/corpus.json"),
        index_file=get_path("paths", "index_file", "work/index.json"),
        kg_file=get_path("paths", "kg_file", "work/kg.json"),
        run_dir=get_path("paths", "run_dir", "work/runs"),
        report_dir=get_path("paths", "report_dir", "work/report"),
        test_ids=test_ids,
        embed_provider=get("embedding", "provider", "hash"),
        embed_endpoint=get("embedding", "endpoint", ""),
        embed_model=get("embedding", "model", ""),
        embed_dim=get_int("embedding", "dim", 256),
        embed_seed=get_int("embedding", "seed", 0),
        chat_provider=get("generation", "provider", "stub"),
        stub_seed=get_int("generation", "stub_seed", 0),
        run_id=get("generation", "run_id", "run1"),
        n_calls=n_calls,
        strategies=strategies,
        query_mode=query_mode,
        max_in_flight=get_int("generation", "max_in_flight", 4),
        min_delay=get_float("generation", "min_delay", 0.0),
        llm=llm,
        templates=templates,
        baseline_example_id=get("prompt", "baseline_example_id", "") or None,
        eval_provider=get("evaluation", "provider", "stub"),
        eval_endpoint=get("evaluation", "endpoint", ""),
        eval_model=get("evaluation", "model", ""),
        eval_dim=get_int("evaluation", "dim", 64),
        eval_seed=get_int("evaluation", "seed", 0),
        resamples=get_int("evaluation", "resamples", 1000),
        ci_level=get_float("evaluation", "level", 0.95),
        bootstrap_seed=get_int("evaluation", "bootstrap_seed", 123),
    )
