import numpy as np
import pytest

from asgdsim import (
    LogisticObjective,
    MlpObjective,
    QuadraticObjective,
    SeededRng,
    gen_synthetic,
)


@pytest.fixture
def bowl():
    """Pure quadratic bowl 0.5 * ||theta||^2 in two dimensions."""
    return QuadraticObjective(dim=2)


def make_logistic(seed=0, num_samples=240, dim=6, num_classes=3, separation=3.0,
                  weight_decay=0.0):
    ds = gen_synthetic(SeededRng(seed, 0), num_samples, dim, num_classes, separation)
    return LogisticObjective(ds, num_classes, weight_decay=weight_decay)


def make_mlp(seed=0, num_samples=200, dim=4, num_classes=3, hidden=8,
             weight_decay=0.0):
    ds = gen_synthetic(SeededRng(seed, 0), num_samples, dim, num_classes, 2.5)
    return MlpObjective(ds, num_classes, hidden=hidden, weight_decay=weight_decay)


def random_params(obj, seed=1, scale=0.5):
    rng = np.random.default_rng(seed)
    return scale * rng.normal(size=obj.dim)
