"""Pytest configuration for dg-multigrid tests."""

import numpy as np
import pytest


def pytest_addoption(parser):
    """Add command line options to pytest."""
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="Run full-scale convergence experiments",
    )


def pytest_configure(config):
    """Register custom markers."""
    config.addinivalue_line("markers", "slow: mark test as a full-scale experiment")


def pytest_collection_modifyitems(config, items):
    """Skip slow tests unless --run-slow is specified."""
    if not config.getoption("--run-slow"):
        skip_slow = pytest.mark.skip(reason="Needs --run-slow option to run")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip_slow)


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def clean_solver_env(monkeypatch):
    """Keep DGMG_* settings of the host out of the tests."""
    for name in (
        "DGMG_RTOL",
        "DGMG_MAX_ITERATIONS",
        "DGMG_PRECISION",
        "DGMG_PRE_SMOOTHING",
        "DGMG_POST_SMOOTHING",
        "DGMG_REORTHOGONALIZATION_THRESHOLD",
        "DGMG_MEMORY_CAP",
        "DGMG_DEBUG",
    ):
        monkeypatch.delenv(name, raising=False)
