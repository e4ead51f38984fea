import logging

import numpy as np
import pytest

from activecf.aspect_model import AspectModel
from activecf.dataset import UserNormStats


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def unit_stats():
    return UserNormStats(3.0, 1.0)


@pytest.fixture(scope="session")
def small_model():
    """K=3, 8 items, R=5 with distinct, moderately wide Gaussians."""
    g = np.random.default_rng(7)
    return AspectModel(
        mu=g.normal(size=(3, 8)),
        sigma=g.uniform(0.5, 1.2, size=(3, 8)),
        simplex=g.dirichlet(np.ones(3), size=4),
        rating_scale=5,
    )


@pytest.fixture(autouse=True)
def _quiet_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="activecf")
