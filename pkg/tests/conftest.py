import numpy as np
import pytest

from ftda.data import (CLASSIFICATION, REGRESSION, Dataset, Task,
                       make_synthetic)
from ftda.model import init_mlp


@pytest.fixture
def rng():
    return np.random.default_rng(20240915)


@pytest.fixture
def tiny_regression():
    """Small noisy linear-regression dataset plus a matching MLP."""
    ds, truth = make_synthetic("linear-regression", n=24, d=3, noise=0.05,
                               seed=11)
    model = init_mlp(ds.d, [5, 4], ds.task, seed=3)
    return ds, truth, model


@pytest.fixture
def tiny_classification():
    ds, truth = make_synthetic("two-gaussians-classification", n=24, d=3,
                               noise=2.0, seed=12)
    model = init_mlp(ds.d, [5, 4], ds.task, seed=4)
    return ds, truth, model


def linear_dataset(n=30, d=4, noise=0.1, seed=5) -> Dataset:
    """Full-column-rank regression data for convex linear-model tests."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    w = rng.normal(size=d)
    y = x @ w + noise * rng.normal(size=n)
    return Dataset(x, y, Task(REGRESSION))


def linear_model(ds: Dataset, theta=None):
    """No-hidden-layer MLP: plain linear regression in flat-parameter form."""
    m = init_mlp(ds.d, [], ds.task, seed=0)
    return m if theta is None else m.with_theta(theta)
