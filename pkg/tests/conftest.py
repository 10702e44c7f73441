import numpy as np
import pytest

from ctq.datasets import fig1_database, fig1_query
from ctq.index import build


@pytest.fixture
def fig1_index():
    return build(fig1_database())


@pytest.fixture
def fig1_q():
    return fig1_query()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
