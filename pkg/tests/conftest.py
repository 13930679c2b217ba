from pathlib import Path

import pytest

from miscite.graph import CitationEdge, CitationGraph, Publication

DATA = Path(__file__).parent / "data"


def make_graph(pairs, labels=None, texts=None):
    """Graph from (source, target) pairs; node ids come from the pairs."""
    ids = sorted({n for p in pairs for n in p} | set(texts or {}))
    nodes = [Publication(n, (texts or {}).get(n, f"paper {n} about topic {n}")) for n in ids]
    edges = [
        CitationEdge(f"e{i}", s, t, f"{s} cites {t} for result {i}", (labels or {}).get(f"e{i}"))
        for i, (s, t) in enumerate(pairs)
    ]
    return CitationGraph(nodes, edges)


@pytest.fixture
def data_dir():
    return DATA


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
