import pathlib

import numpy as np
import pytest

from pacinglab.market import MarketInstance, SolverConfig, load_instance

FIXTURE_DIR = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fixture_dir() -> pathlib.Path:
    return FIXTURE_DIR


@pytest.fixture(scope="session")
def fx():
    """Loader for the canned worked-example instances."""

    def load(name: str) -> MarketInstance:
        return load_instance(FIXTURE_DIR / f"{name}.json")

    return load


@pytest.fixture()
def cfg() -> SolverConfig:
    return SolverConfig()


def random_instances(count, seed0=1000, n_range=(2, 9), m_range=(4, 15), budget_scale=0.5):
    """Deterministic stream of dense instances for property tests."""
    from pacinglab.market import generate_complete_graph

    rng = np.random.default_rng(123)
    out = []
    for k in range(count):
        n = int(rng.integers(*n_range))
        m = int(rng.integers(*m_range))
        out.append(generate_complete_graph(n, m, seed=seed0 + k, budget_scale=budget_scale))
    return out
