import numpy as np
import pytest

from fairrerank.dataio import InteractionDataset


def make_dataset(pairs, n_users=None, n_items=None, weights=None) -> InteractionDataset:
    """Build a dataset from (user_idx, item_idx) pairs with dense vocabularies."""
    pairs = list(pairs)
    u = np.array([p[0] for p in pairs], dtype=np.int64)
    i = np.array([p[1] for p in pairs], dtype=np.int64)
    n = int(u.max()) + 1 if n_users is None else n_users
    m = int(i.max()) + 1 if n_items is None else n_items
    w = np.ones(len(pairs)) if weights is None else np.asarray(weights, dtype=float)
    return InteractionDataset(
        [f"u{k}" for k in range(n)],
        [f"i{k}" for k in range(m)],
        u,
        i,
        w,
    )


def random_dataset(rng, n_users, n_items, density=0.1) -> InteractionDataset:
    """Random sparse dataset without duplicate pairs."""
    mask = rng.random((n_users, n_items)) < density
    u, i = np.nonzero(mask)
    return make_dataset(list(zip(u, i)), n_users, n_items)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
