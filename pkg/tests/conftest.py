import re

import numpy as np
import pytest

from gnfbc.data import Dataset, make_splits
from gnfbc.graph import build_graph

_CRITERION = re.compile(r"test_criterion_(\d+)")
_results = {}


def random_pairs(rng, n, p=0.3):
    return [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]


def random_graph(rng, n, p=0.3):
    pairs = random_pairs(rng, n, p)
    return build_graph(pairs, n), pairs


def toy_dataset(rng, n=10, d=4, c=3, p=0.35):
    g, _ = random_graph(rng, n, p)
    labels = np.arange(n) % c
    return Dataset(g, rng.uniform(-1, 1, (n, d)), labels, make_splits(n, seed=0), c)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def path3():
    return build_graph([(0, 1), (1, 2)], 3)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = _CRITERION.search(item.name)
    if not m or "test_acceptance" not in item.nodeid:
        return
    key = int(m.group(1))
    doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _results[key] = (status, doc)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_results):
        status, doc = _results[key]
        terminalreporter.write_line(f"[{status}] criterion {key:2d}: {doc}")
