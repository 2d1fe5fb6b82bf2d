import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

from edgeoffload import Dataset, apply_metric_map, fit_metric_map, standard_fixture  # noqa: E402

settings.register_profile("ci", deadline=None, max_examples=60)
settings.load_profile("ci")


def make_dataset(metrics, rewards=None, *, loss_weak=None, ids=None):
    """Dataset with metrics already populated; losses chosen so that
    ``reward = loss_weak - loss_strong`` holds with ``loss_strong = 0``
    unless explicit weak losses are given."""
    m = np.asarray(metrics, dtype=float)
    n = m.size
    r = np.zeros(n) if rewards is None else np.asarray(rewards, dtype=float)
    lw = r.copy() if loss_weak is None else np.asarray(loss_weak, dtype=float)
    ls = lw - r
    ids = ids or tuple(f"x{i:05d}" for i in range(n))
    return Dataset(ids, np.zeros(n), lw, ls, m)


@pytest.fixture(scope="session")
def fitted_fixture():
    """Small synthetic dataset split into train/test with the metric fitted on train."""
    data = standard_fixture(n=1500, seed=7)
    idx = np.arange(len(data))
    train, test = data.subset(idx[:1000]), data.subset(idx[1000:])
    mmap = fit_metric_map(train, seed=3)
    return apply_metric_map(train, mmap), apply_metric_map(test, mmap), mmap


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
