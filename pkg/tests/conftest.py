import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from prerank.corpus import LabeledList, build_vocab, tokenize

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_lists():
    """Three small labeled lists with text, plus their vocabulary."""
    raw = [
        ("q1", "red apple", [("d1", "red apple pie", 2), ("d2", "green pear", 0), ("d3", "apple tree", 1)]),
        ("q2", "blue sky", [("d4", "blue sky today", 2), ("d5", "grey clouds", 0), ("d6", "sky high", 1),
                            ("d7", "deep blue sea", 1)]),
        ("q3", "fast car", [("d8", "slow boat", 0), ("d9", "fast red car", 2)]),
    ]
    texts = [q for _, q, _ in raw] + [t for *_, docs in raw for _, t, _ in docs]
    vocab = build_vocab(texts)
    lists = [LabeledList(qid, tokenize(q, vocab), [(d, tokenize(t, vocab)) for d, t, _ in docs],
                         tuple(g for *_, g in docs), 2) for qid, q, docs in raw]
    return vocab, lists


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``report(n, ok, detail, rows=())`` records one PASS/FAIL line and fails the test on FAIL.

    A test that raises before reporting is recorded as FAIL too.
    """
    lines = request.config.stash.setdefault(ACCEPTANCE, [])
    reported = []

    def report(n: int, ok: bool, detail: str, rows=()):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        lines.append((n, line, tuple(rows)))
        reported.append(n)
        print(line, *(f"  {r}" for r in rows), sep="\n")
        assert ok, line

    yield report
    if not reported:
        n = int(request.node.name.split("_")[1][1:])
        lines.append((n, f"FAIL criterion {n}: raised before measuring ({request.node.name})", ()))


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line, rows in sorted(lines, key=lambda x: x[0]):
        terminalreporter.write_line(line)
        for r in rows:
            terminalreporter.write_line(f"  {r}")
