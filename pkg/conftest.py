"""Shared pytest fixtures"""
import numpy as np
import pytest

from fedawe_sim.objectives import SyntheticPool, generate_dirichlet_partition, make_quadratics


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def two_quadratics():
    """The two-client bias problem: minimizers 0 and 100, optimum 50"""
    return make_quadratics([0.0, 100.0])


@pytest.fixture
def small_pool():
    return SyntheticPool.generate(classes=3, features=4, per_class=300, rng=np.random.default_rng(7))


@pytest.fixture
def small_logistic(small_pool):
    return generate_dirichlet_partition(0.5, 4, 3, small_pool, np.random.default_rng(8), samples_per_client=40)


@pytest.fixture
def quadratic_config_dict():
    return {
        'name': 'tiny',
        'algorithms': ['fedawe', 'fedavg_active'],
        'm': 4,
        'seeds': [3],
        'objective': {'kind': 'quadratic', 'dim': 2, 'scale': 3.0},
        'noise': {'sigma': 0.5},
        'dynamics': {'family': 'sine', 'p': [0.9, 0.7, 0.5, 0.3]},
        'hyper': {'eta_0': 0.05, 'rounds': 15},
    }
