import numpy as np
import pytest

from pddiffusion import build_topology, make_cs_instance


@pytest.fixture
def ring5():
    return build_topology("ring-digraph", 5)


@pytest.fixture
def mesh6():
    """Symmetric random graph on 6 nodes, dense enough to be well mixed."""
    return build_topology("undirected-random", 6, density=0.6, seed=11)


@pytest.fixture
def small_lasso():
    """Family-B consensus LASSO on 4 agents, 6 features, with its oracle."""
    problem, truth, signal = make_cs_instance(
        n_agents=4, p=6, m_k=12, sparsity=0.5, noise_std=0.02,
        lam=0.2, seed=42, family="B", ridge=0.1)
    return problem, truth, signal


@pytest.fixture
def small_private():
    """Family-A instance (private blocks, random coupling) with its oracle."""
    problem, truth, signal = make_cs_instance(
        n_agents=4, p=5, m_k=10, sparsity=0.4, noise_std=0.02,
        lam=0.15, seed=7, family="A", ridge=0.1)
    return problem, truth, signal


@pytest.fixture
def smooth_quadratic():
    """Family-B instance with g = zero (smooth, strongly convex)."""
    problem, truth, signal = make_cs_instance(
        n_agents=5, p=4, m_k=9, sparsity=0.5, noise_std=0.01,
        lam=0.0, seed=19, family="B", ridge=0.2)
    return problem, truth, signal


def rng_stream(seed, count):
    """Independent child generators for property-test loops."""
    root = np.random.default_rng(seed)
    return [np.random.default_rng(s) for s in root.integers(0, 2**63, size=count)]
