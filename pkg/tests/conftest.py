import numpy as np
import pytest

import banditxd as bx


def make_uniform_instance(n, m, pairs=None):
    """Stationary uniform arrivals; per-feature Bernoulli (mu0, mu1) pairs."""
    if pairs is None:
        pairs = [(0.25, 0.75)] * m
    return bx.build_instance(
        {
            "horizon": n,
            "features": m,
            "arrival": {"kind": "stationary", "p": [1.0 / m] * m},
            "rewards": [
                [{"kind": "bernoulli", "mean": lo}, {"kind": "bernoulli", "mean": hi}]
                for lo, hi in pairs
            ],
        }
    )


def make_point_instance(n, m=1, lo=0.0, hi=1.0):
    """Deterministic rewards: arm 0 pays lo, arm 1 pays hi, single-feature by default."""
    return bx.build_instance(
        {
            "horizon": n,
            "features": m,
            "arrival": {"kind": "stationary", "p": [1.0 / m] * m},
            "rewards": [
                [{"kind": "point", "value": lo}, {"kind": "point", "value": hi}]
                for _ in range(m)
            ],
        }
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def mixed_m2_instance():
    return make_uniform_instance(4096, 2, pairs=[(0.25, 0.75), (0.3, 0.8)])
