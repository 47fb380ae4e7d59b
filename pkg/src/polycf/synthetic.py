"""Block-structured interaction data for desk-scale experiments."""

from __future__ import annotations

import numpy as np

from .interactions import Dataset, InteractionMatrix


def block_dataset(
    seed: int = 0,
    num_users: int = 200,
    num_items: int = 200,
    communities: int = 2,
    p_within: float = 0.3,
    p_across: float = 0.01,
    test_fraction: float = 0.2,
    popularity_shape: float | None = None,
) -> Dataset:
    """Users and items split into equal communities with dense diagonal blocks.

    A ``test_fraction`` share of every user's within-community interactions is
    held out as the test set; cross-community interactions all stay in train.
    With ``popularity_shape`` set, each item's within-block probability is
    scaled by a Pareto-distributed weight (mean one), so items inside a block
    differ in popularity.
    """
    rng = np.random.default_rng(seed)
    ucomm = np.arange(num_users) * communities // num_users
    icomm = np.arange(num_items) * communities // num_items
    same = ucomm[:, None] == icomm[None, :]
    within = np.full(num_items, p_within)
    if popularity_shape is not None:
        w = rng.pareto(popularity_shape, num_items) + 0.2
        within = np.clip(p_within * w / w.mean(), 0.0, 0.95)
    prob = np.where(same, within[None, :], p_across)
    full = rng.random((num_users, num_items)) < prob

    train = full.copy()
    test = []
    for u in range(num_users):
        within = np.flatnonzero(full[u] & same[u])
        n_test = int(round(test_fraction * len(within)))
        held = np.sort(rng.choice(within, size=n_test, replace=False)) if n_test else np.zeros(0, dtype=np.int64)
        train[u, held] = False
        test.append(held.astype(np.int64))
    return Dataset(InteractionMatrix(train.astype(np.float64)), test, name=f"block-{seed}")


def random_interactions(rng: np.random.Generator, m: int, n: int, density: float, connected_rows: bool = True) -> np.ndarray:
    """Dense 0/1 matrix where (optionally) every user and item has an interaction."""
    D = (rng.random((m, n)) < density).astype(np.float64)
    if connected_rows:
        for u in np.flatnonzero(D.sum(axis=1) == 0):
            D[u, rng.integers(n)] = 1.0
        for i in np.flatnonzero(D.sum(axis=0) == 0):
            D[rng.integers(m), i] = 1.0
    return D
