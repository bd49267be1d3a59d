"""Command-line pipeline orchestration.

Subcommands mirror the pipeline stages: ingest, index, build-kg, retrieve,
generate, evaluate. Every command reads one INI config (--config); --dry-run
prints the planned work without touching outputs, and every command can be
re-run safely (stage outputs are rewritten deterministically, generation
resumes instead of duplicating calls).
"""

from __future__ import annotations

import logging
import sys

import click

from . import corpus as corpus_mod
from . import metrics as metrics_mod
from . import snomed as snomed_mod
from .config import ConfigError, PipelineConfig, load_config
from .embedding import EmbeddingError, EmbeddingIndex
from .prompts import PromptError, build_prompt, uses_kg, uses_retrieval
from .runner import RunnerError, RunStore, run_batch
from .util import fmt_real

log = logging.getLogger(__name__)

_PIPELINE_ERRORS = (ConfigError, EmbeddingError, PromptError, RunnerError,
                    corpus_mod.CorpusError, snomed_mod.SnomedError,
                    metrics_mod.MetricsError, OSError)


class _App:
    def __init__(self, config_path: str, dry_run: bool):
        self.config_path = config_path
        self.dry_run = dry_run
        self._config: PipelineConfig | None = None

    @property
    def config(self) -> PipelineConfig:
        if self._config is None:
            self._config = load_config(self.config_path)
        return self._config


@click.group()
@click.option("--config", "config_path", required=True,
              type=click.Path(dir_okay=False),
              help="Pipeline INI config file.")
@click.option("--verbose", is_flag=True, help="Debug-level logging.")
@click.option("--dry-run", is_flag=True, help="Describe planned work; write nothing.")
@click.pass_context
def main(ctx: click.Context, config_path: str, verbose: bool, dry_run: bool):
    """Clinical-note generation pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = _App(config_path, dry_run)


def _fail(exc: Exception) -> "click.ClickException":
    return click.ClickException(str(exc))


def _load_corpus(cfg: PipelineConfig):
    try:
        return corpus_mod.load_corpus(cfg.corpus_file)
    except _PIPELINE_ERRORS as exc:
        raise _fail(exc)


@main.command()
@click.pass_obj
def ingest(app: _App):
    """Parse notes + annotations into the cached corpus file."""
    cfg = app.config
    if app.dry_run:
        click.echo(f"dry-run: would ingest notes from {cfg.notes_dir} "
                   f"with annotations {cfg.annotations_file} -> {cfg.corpus_file}")
        return
    try:
        cases = corpus_mod.ingest_corpus(cfg.notes_dir, cfg.annotations_file)
        if cfg.demographics_file is not None:
            corpus_mod.attach_demographics(cases, cfg.demographics_file)
        split = corpus_mod.split_corpus(cases, cfg.test_ids)
        cfg.corpus_file.parent.mkdir(parents=True, exist_ok=True)
        corpus_mod.save_corpus(cases, split, cfg.corpus_file)
    except _PIPELINE_ERRORS as exc:
        raise _fail(exc)
    click.echo(f"index={len(split.index_pool)} test={len(split.test_pool)}")


@main.command()
@click.pass_obj
def index(app: _App):
    """Embed index-pool cases into the exact-search index file."""
    cfg = app.config
    if app.dry_run:
        click.echo(f"dry-run: would embed index pool from {cfg.corpus_file} "
                   f"-> {cfg.index_file}")
        return
    try:
        cases, split = _load_corpus(cfg)
        by_id = {c.case_id: c for c in cases}
        pool = [by_id[cid] for cid in split.index_pool]
        provider = cfg.make_embedding_provider()
        idx = EmbeddingIndex.build(pool, provider)
        cfg.index_file.parent.mkdir(parents=True, exist_ok=True)
        idx.save(cfg.index_file)
    except _PIPELINE_ERRORS as exc:
        raise _fail(exc)
    click.echo(f"indexed={len(idx)} dim={idx.dim} -> {cfg.index_file}")


@main.command("build-kg")
@click.pass_obj
def build_kg(app: _App):
    """Parse SNOMED release files into the knowledge-graph file."""
    cfg = app.config
    for name, value in (("snomed_map_file", cfg.snomed_map_file),
                        ("snomed_owl_file", cfg.snomed_owl_file),
                        ("snomed_descriptions_file", cfg.snomed_descriptions_file)):
        if value is None:
            raise click.ClickException(f"config missing [paths] {name}")
    if app.dry_run:
        click.echo(f"dry-run: would build knowledge graph from {cfg.snomed_map_file}, "
                   f"{cfg.snomed_owl_file}, {cfg.snomed_descriptions_file} -> {cfg.kg_file}")
        return
    try:
        graph = snomed_mod.load_release(cfg.snomed_map_file, cfg.snomed_owl_file,
                                        cfg.snomed_descriptions_file)
        cfg.kg_file.parent.mkdir(parents=True, exist_ok=True)
        snomed_mod.save_graph(graph, cfg.kg_file)
    except _PIPELINE_ERRORS as exc:
        raise _fail(exc)
    click.echo(f"concepts={len(graph.concepts)} axioms={len(graph.axioms)} "
               f"codes={len(graph.icd_index)} -> {cfg.kg_file}")


@main.command()
@click.argument("query", required=False)
@click.option("--case-id", "case_id", default=None,
              help="Query with this case's configured query-mode fields instead of free text.")
@click.option("-k", "--top-k", "k", default=10, show_default=True, help="Hits to print.")
@click.pass_obj
def retrieve(app: _App, query: str | None, case_id: str | None, k: int):
    """Search the index with free text or a case's own query fields."""
    cfg = app.config
    if (query is None) == (case_id is None):
        raise click.ClickException("provide exactly one of QUERY or --case-id")
    if app.dry_run:
        click.echo(f"dry-run: would search {cfg.index_file} (k={k})")
        return
    try:
        idx = EmbeddingIndex.load(cfg.index_file, cfg.make_embedding_provider())
        if case_id is not None:
            cases, _ = _load_corpus(cfg)
            case = next((c for c in cases if c.case_id == case_id), None)
            if case is None:
                raise click.ClickException(f"unknown case id {case_id!r}")
            hits = idx.query_for_case(case, cfg.query_mode, k=k)
        else:
            hits = idx.search(query, k=k)
    except _PIPELINE_ERRORS as exc:
        raise _fail(exc)
    click.echo("rank\tcase_id\trelatedness")
    for rank, hit in enumerate(hits, start=1):
        click.echo(f"{rank}\t{hit.case_id}\t{fmt_real(hit.relatedness)}")


@main.command()
@click.pass_obj
def generate(app: _App):
    """Run the configured strategies over the test pool, resumably."""
    cfg = app.config
    try:
        cases, split = _load_corpus(cfg)
    except click.ClickException:
        raise
    by_id = {c.case_id: c for c in cases}
    targets = [by_id[cid] for cid in split.test_pool]
    need_hits = any(uses_retrieval(s) for s in cfg.strategies)
    need_kg = any(uses_kg(s) for s in cfg.strategies)

    if app.dry_run:
        click.echo(f"dry-run: would issue up to "
                   f"{len(targets) * len(cfg.strategies) * cfg.n_calls} calls "
                   f"({len(targets)} cases x {len(cfg.strategies)} strategies "
                   f"x {cfg.n_calls} calls) via provider {cfg.chat_provider!r} "
                   f"into {cfg.run_dir / cfg.run_id}")
        return

    try:
        idx = None
        if need_hits or cfg.index_file.is_file():
            idx = EmbeddingIndex.load(cfg.index_file, cfg.make_embedding_provider())
        graph = snomed_mod.load_graph(cfg.kg_file) if need_kg else None
        example_texts = {c.case_id: c.note_text for c in cases}
        client = cfg.make_chat_client()
        store = RunStore(cfg.run_dir, cfg.run_id)

        total = failed = 0
        for case in targets:
            hits = idx.query_for_case(case, cfg.query_mode, k=10) if idx is not None else None
            fragment = (snomed_mod.render_kg_fragment(graph, case.icd_codes)
                        if graph is not None else None)
            for strategy in cfg.strategies:
                bundle = build_prompt(
                    strategy, case,
                    hits=hits if (uses_retrieval(strategy) or strategy == "baseline_one_shot")
                    else None,
                    example_texts=example_texts,
                    kg_fragment=fragment if uses_kg(strategy) else None,
                    templates=cfg.templates,
                    baseline_example_id=(cfg.baseline_example_id
                                         if strategy == "baseline_one_shot" else None))
                records = run_batch(bundle, cfg.llm, cfg.n_calls, client, store,
                                    max_in_flight=cfg.max_in_flight,
                                    min_delay=cfg.min_delay)
                total += len(records)
                failed += sum(1 for r in records if not r.ok)
    except _PIPELINE_ERRORS as exc:
        raise _fail(exc)

    click.echo(f"records={total} failed={failed} -> {store.run_dir}")
    if failed:
        sys.exit(1)


@main.command()
@click.pass_obj
def evaluate(app: _App):
    """Score persisted generations and emit the report files."""
    cfg = app.config
    if app.dry_run:
        click.echo(f"dry-run: would evaluate run {cfg.run_id} from {cfg.run_dir} "
                   f"-> {cfg.report_dir}")
        return
    try:
        cases, split = _load_corpus(cfg)
        store = RunStore(cfg.run_dir, cfg.run_id)
        if not store.records_path.is_file():
            raise click.ClickException(f"no run records at {store.records_path}")
        records = list(store.load().values())
        by_id = {c.case_id: c for c in cases}
        in_store = {r.case_id for r in records}
        order = [cid for cid in split.test_pool if cid in in_store]
        order += sorted(in_store - set(order))
        report = metrics_mod.evaluate_records(
            records, by_id, cfg.make_token_embedder(), cfg.strategies,
            case_order=order, resamples=cfg.resamples, level=cfg.ci_level,
            seed=cfg.bootstrap_seed)
        written = metrics_mod.emit_report(report, cfg.report_dir)
    except _PIPELINE_ERRORS as exc:
        raise _fail(exc)
    click.echo(f"samples={len(report.samples)} files={len(written)} -> {cfg.report_dir}")


if __name__ == "__main__":
    main()
