import numpy as np
import pytest

from proxmsm.core import PanelDataset, TreatmentSupport
from proxmsm.dgm import simulate


@pytest.fixture(scope="session")
def sim4000():
    return simulate(n=4000, seed=7)


@pytest.fixture(scope="session")
def sim_large():
    return simulate(n=1_000_000, seed=3)


@pytest.fixture
def tiny():
    """Two records with every role scalar."""
    cols = dict(y=[1.0, 2.0], a0=[0, 1], a1=[1, 1], z0=[0.1, 0.2], z1=[0.3, 0.4],
                w0=[0.5, 0.6], w1=[0.7, 0.8], x0=[0.9, 1.0], x1=[1.1, 1.2])
    return cols


def make_dataset(n=50, seed=0, support=None):
    rng = np.random.default_rng(seed)
    a0 = rng.integers(0, 2, n)
    a1 = rng.integers(0, 2, n)
    if support == "monotone":
        a1 = np.maximum(a0, a1)
    return PanelDataset(y=rng.normal(size=n), a0=a0, a1=a1, z0=rng.normal(size=n),
                        z1=rng.normal(size=n), w0=rng.normal(size=n), w1=rng.normal(size=n),
                        x0=rng.normal(size=n), x1=rng.normal(size=n), v=None,
                        support=TreatmentSupport.parse(support))
