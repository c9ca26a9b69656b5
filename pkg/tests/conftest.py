import numpy as np
import pytest

from mvbound import Dataset

# hand-checkable 4-point, 3-class fixture used throughout: predictions are
# (1, 2, 2, 3), class masses u = (2, 1.5, 0.5)
TOY_VOTES = np.array(
    [
        [0.6, 0.3, 0.1],
        [0.2, 0.5, 0.3],
        [0.4, 0.45, 0.15],
        [0.1, 0.2, 0.7],
    ]
)
TOY_POST = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 0.5, 0.5],
    ]
)


@pytest.fixture
def toy():
    return TOY_VOTES.copy(), TOY_POST.copy()


def random_instance(rng, max_points=50, max_classes=5, onehot_chance=0.25):
    """Random votes/posteriors pair: row-stochastic votes, posteriors either
    Dirichlet or one-hot (the latter exercises empty-class edge cases)."""
    n = int(rng.integers(2, max_points + 1))
    k = int(rng.integers(2, max_classes + 1))
    votes = rng.dirichlet(np.full(k, float(rng.uniform(0.3, 3.0))), size=n)
    if rng.uniform() < onehot_chance:
        post = np.zeros((n, k))
        post[np.arange(n), rng.integers(0, k, size=n)] = 1.0
    else:
        post = rng.dirichlet(np.full(k, float(rng.uniform(0.3, 3.0))), size=n)
    return votes, post


def make_blobs(n, n_classes=10, n_features=16, std=0.95, seed=11, name="blobs"):
    """Equal-count Gaussian clusters around standard-normal centers, shuffled,
    trimmed to exactly n points."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, (n_classes, n_features))
    per = -(-n // n_classes)
    X = np.repeat(centers, per, axis=0) + rng.normal(0.0, std, (per * n_classes, n_features))
    y = np.repeat(np.arange(1, n_classes + 1), per)
    keep = rng.permutation(per * n_classes)[:n]
    return Dataset(X[keep], y[keep], name=name, n_classes=n_classes)
