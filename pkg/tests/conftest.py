import numpy as np
import pytest

from spheremix import geometry
from spheremix.flow import ComponentParams, LayerParams


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)


def random_layer(rng, p=1, beta_low=0.3, beta_high=8.0):
    betas = rng.uniform(beta_low, beta_high, p)
    centers = geometry.random_unit(rng, p)
    etas = rng.dirichlet(np.ones(p))
    return LayerParams(betas, centers, etas)


def random_component(rng, K=3, p=1, **kw):
    return ComponentParams(tuple(random_layer(rng, p, **kw) for _ in range(K)))
