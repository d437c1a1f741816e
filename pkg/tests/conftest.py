from __future__ import annotations

import pytest
from hypothesis import strategies as st

from semsound.kg import Entity, KnowledgeGraph, Triple

CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not report.failed:
        return
    number, title = marker.args
    status = "PASS" if report.passed else "FAIL"
    if CRITERIA.get(number, ("", "PASS"))[1] == "FAIL":
        status = "FAIL"
    CRITERIA[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, status = CRITERIA[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}")


@st.composite
def small_graphs(draw, max_entities=8, max_triples=20):
    """Random KGs over e0..e{n-1} with up to ``max_triples`` triples on two relation labels."""
    n = draw(st.integers(1, max_entities))
    ids = [f"e{i}" for i in range(n)]
    keys = st.tuples(st.sampled_from(ids), st.sampled_from(["r", "s"]), st.sampled_from(ids))
    chosen = draw(st.lists(keys, max_size=max_triples, unique=True))
    probs = draw(
        st.lists(
            st.floats(0.01, 1.0, allow_nan=False),
            min_size=len(chosen),
            max_size=len(chosen),
        )
    )
    triples = [Triple(h, r, t, p) for (h, r, t), p in zip(chosen, probs)]
    return KnowledgeGraph([Entity(e, "concept") for e in ids], triples)


def chain_graph(ids, probs, relation="followed_by", category="music-note"):
    g = KnowledgeGraph([Entity(e, category) for e in ids])
    for (a, b), p in zip(zip(ids, ids[1:]), probs):
        g = g.add_triple(a, relation, b, p)
    return g
