"""Shared helpers for the test suite."""

import numpy as np
import pytest


def make_cloud(seed, n=32, scale=1.0):
    """Deterministic random cloud used across tests."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, scale, size=(n, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
