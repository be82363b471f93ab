import numpy as np
import pytest

from cellfree.network import NetworkConfig, Realization, realization_from_beta


def manual_realization(beta, sigma_sq, delta=None):
    """Realization with hand-set statistics (no geometry)."""
    beta = np.asarray(beta, float)
    sigma_sq = np.asarray(sigma_sq, float)
    M, K = beta.shape
    delta = np.zeros((M, K), dtype=np.int8) if delta is None else np.asarray(delta, np.int8)
    sets = tuple(tuple(int(k) for k in np.flatnonzero(row)) for row in delta)
    return Realization(np.zeros((M, 2)), np.zeros((K, 2)), beta, sigma_sq, sets, delta)


def random_small(rng, num_aps=5, num_ues=3, max_served=2, **overrides):
    cfg = NetworkConfig(num_aps=num_aps, num_ues=num_ues, max_served=max_served, **overrides)
    beta = 10 ** rng.uniform(-9.5, -6.5, size=(num_aps, num_ues))
    return cfg, realization_from_beta(beta, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
