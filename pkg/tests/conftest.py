import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from skvmn.model import ModelConfig, init_params  # noqa: E402
from skvmn.seqdep import TriangularRange  # noqa: E402

# every attention weight in (0, 1) lands in the middle range
SINGLE_CODE_RANGES = (
    TriangularRange(-10.0, -5.0, 0.0),
    TriangularRange(-1.0, 0.5, 2.0),
    TriangularRange(5.0, 10.0, 15.0),
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    return ModelConfig.build(6, 4, 5)


@pytest.fixture
def small_params(small_config):
    return init_params(small_config, seed=0, sigma=1.0)


def arrays(params):
    return {k: v.data.copy() for k, v in params.items()}


def distinct_identity_questions(params, config):
    """Two question ids whose identity vectors differ, or None."""
    from skvmn.metrics import question_clusters

    _, _, labels = question_clusters(params, config)
    for a in range(len(labels)):
        for b in range(a + 1, len(labels)):
            if labels[a] != labels[b]:
                return a + 1, b + 1
    return None


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("#")[1].split()[0])):
            terminalreporter.write_line(line)
