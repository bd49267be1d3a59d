"""Shared fixtures: one tiny local model, encoder, and live service."""

import sys
from contextlib import contextmanager
from pathlib import Path

import pytest

from embedlab import TransformerEncoder, make_test_model, start_service

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def tiny_model(tmp_path_factory):
    return make_test_model(tmp_path_factory.mktemp("model") / "tiny-bert", seed=0)


@pytest.fixture(scope="session")
def encoder(tiny_model):
    return TransformerEncoder(tiny_model)


@pytest.fixture(scope="session")
def service(tiny_model):
    handle = start_service(str(tiny_model))
    yield handle
    handle.close()


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
