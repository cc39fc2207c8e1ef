import sys

import numpy as np
import pytest

from fedsim.datasets import generate_dataset


@pytest.fixture
def gauss_1000():
    return generate_dataset("gauss", 1000, 0.0, 0.5, np.random.default_rng(0))


def max_class_share(partition, dataset):
    shares = []
    for idx in partition.assignments:
        labels = dataset.labels[idx]
        shares.append(max((labels > 0).mean(), (labels < 0).mean()))
    return float(np.mean(shares))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in module.CHECKS:
        if name in module.RESULTS:
            terminalreporter.write_line(module.verdict_line(name))
