"""
Shared test fixtures and configuration for all test files
Provides reusable models, experiment configs and file helpers
"""
import json
from pathlib import Path

import numpy as np
import pytest

from bandit_sbm.graph import BlockModel, GraphSample


# ============================================================================
# MODEL TEST DATA - Shared across test files
# ============================================================================

# Two singleton clusters whose optimum (arm 1) differs from cluster 1's favourite
TWO_CLUSTER_MEANS = [[0.2, 0.9], [0.8, 0.3]]

# Small experiment: 4 agents in 2 clusters, 3 arms, explicit burn-in
SMALL_EXPERIMENT = {
    "M": 4,
    "C": 2,
    "K": 3,
    "T": 100,
    "L": 6,
    "graph": {"p_intra": 1.0, "q_inter": 1.0},
    "rewards": {
        "sigma": 0.1,
        "cluster_means": [[0.5, 0.7, 0.2], [0.3, 0.6, 0.4]],
    },
    "algorithms": ["rule1", "rule2_known"],
    "n_runs": 3,
    "master_seed": 7,
}


def clone(data):
    return json.loads(json.dumps(data))


# ============================================================================
# PYTEST FIXTURES
# ============================================================================


@pytest.fixture
def rng():
    """Seeded generator for tests that draw random instances"""
    return np.random.default_rng(20240601)


@pytest.fixture
def two_cluster_model():
    """M=4, C=2 planted model with clusters {0,1} and {2,3}"""
    return BlockModel.planted(4, 2, 1.0, 0.5)


@pytest.fixture
def singleton_model():
    """M=2 agents, each its own cluster"""
    return BlockModel.planted(2, 2, 1.0, 1.0)


@pytest.fixture
def path_graph():
    """Path 0-1-2"""
    return GraphSample.from_edges(3, [(0, 1), (1, 2)])


@pytest.fixture
def experiment_data():
    """Mutable copy of the small experiment document"""
    return clone(SMALL_EXPERIMENT)


@pytest.fixture
def write_config(tmp_path):
    """Write a config document and return its path"""

    def _write(data, name="config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return _write


# ============================================================================
# PYTEST CONFIGURATION
# ============================================================================


def pytest_configure(config):
    """Configure pytest with custom markers"""
    config.addinivalue_line(
        "markers", "integration: mark test as an integration test"
    )
    config.addinivalue_line(
        "markers", "slow: mark test as slow running"
    )
    config.addinivalue_line(
        "markers", "acceptance: end-to-end scenario check"
    )
