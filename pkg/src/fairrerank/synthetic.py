"""Synthetic interaction data with a long-tail popularity profile.

Used by the test suite and as demo input for the CLI. Item popularity
follows a Zipf-like power law, which reproduces the short-head/long-tail
imbalance the re-ranker is designed to counteract.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataio import InteractionDataset


def zipf_dataset(
    n_users: int = 1000,
    n_items: int = 500,
    min_degree: int = 8,
    max_degree: int = 40,
    exponent: float = 1.0,
    seed: int = 0,
) -> InteractionDataset:
    """Generate a deduplicated dataset whose item popularity is Zipf-distributed.

    Each user draws a uniform profile size in [min_degree, max_degree] and
    samples that many distinct items with probability proportional to
    rank^(-exponent).
    """
    rng = np.random.default_rng(seed)
    weights = 1.0 / np.arange(1, n_items + 1, dtype=np.float64) ** exponent
    probs = weights / weights.sum()

    u_parts, i_parts = [], []
    for u in range(n_users):
        degree = int(rng.integers(min_degree, max_degree + 1))
        degree = min(degree, n_items)
        items = rng.choice(n_items, size=degree, replace=False, p=probs)
        u_parts.append(np.full(degree, u, dtype=np.int64))
        i_parts.append(items.astype(np.int64))

    user_idx = np.concatenate(u_parts)
    item_idx = np.concatenate(i_parts)
    user_ids = [f"u{k}" for k in range(n_users)]
    item_ids = [f"i{k}" for k in range(n_items)]
    return InteractionDataset(
        user_ids,
        item_ids,
        user_idx,
        item_idx,
        np.ones(len(user_idx)),
        None,
        {"source": "synthetic-zipf", "seed": seed, "exponent": exponent},
    )


def write_zipf_file(path: str | Path, delimiter: str = "\t", **kwargs) -> Path:
    """Write a zipf_dataset to a raw delimited file (user, item, weight)."""
    ds = zipf_dataset(**kwargs)
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, w in zip(ds.user_idx, ds.item_idx, ds.weights):
            fh.write(f"{ds.user_ids[u]}{delimiter}{ds.item_ids[i]}{delimiter}{float(w)!r}\n")
    return path
