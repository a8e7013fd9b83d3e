import numpy as np
import pytest

from epigat.connectivity import GraphSample


def random_graph(rng, n=14, f=5, label=0, subject="s", index=0):
    p = rng.uniform(0, 1, (n, n))
    p = (p + p.T) / 2
    np.fill_diagonal(p, 1.0)
    return GraphSample(rng.normal(size=(n, f)), p, label, subject, index)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
