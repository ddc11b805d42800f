"""Shared pytest fixtures for skewdiff tests."""

import sys
from pathlib import Path

import pytest

# Add project root to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.problem import InterfaceProblem, bump_profile, lambda_star  # noqa: E402


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow acceptance tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def plain_problem():
    """Constant coefficient D = 1 with symmetric interface condition."""
    return InterfaceProblem(d_plus=1.0, d_minus=1.0, lam=0.5, u0=bump_profile())


@pytest.fixture
def make_problem():
    """Factory for problems with the default bump profile."""

    def _make(d_plus=10.0, d_minus=1.0, lam=0.5, half_width_L=10.0, final_time_T=0.2):
        if lam == "star":
            lam = lambda_star(d_plus, d_minus)
        return InterfaceProblem(
            d_plus=d_plus,
            d_minus=d_minus,
            lam=lam,
            u0=bump_profile(),
            half_width_L=half_width_L,
            final_time_T=final_time_T,
        )

    return _make
