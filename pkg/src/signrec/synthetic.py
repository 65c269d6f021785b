"""Two-community signed interaction data for desk-scale experiments.

Users and items are split into ``groups`` contiguous blocks. Positive
feedback mostly stays inside a user's block while negative feedback mostly
lands on items of other blocks.
"""

from __future__ import annotations

import numpy as np

from .graph import Interaction


def group_of(index: int, count: int, groups: int) -> int:
    return index * groups // count


def signed_communities(
    n_users: int = 200,
    n_items: int = 100,
    groups: int = 2,
    positives: int = 4,
    negatives: int = 10,
    noise: float = 0.2,
    negative_noise: float | None = 0.05,
    seed: int = 0,
) -> list[Interaction]:
    """Per user, ``positives`` liked and ``negatives`` disliked distinct items.

    With probability ``noise`` (``negative_noise`` for disliked items; None
    reuses ``noise``) a draw ignores the community structure and picks a
    uniformly random unused item instead.
    """
    if negative_noise is None:
        negative_noise = noise
    rng = np.random.default_rng(seed)
    item_group = np.array([group_of(i, n_items, groups) for i in range(n_items)])
    rows: list[Interaction] = []
    for u in range(n_users):
        g = group_of(u, n_users, groups)
        used: set[int] = set()
        for sign, count in ((1, positives), (0, negatives)):
            inside = item_group == g if sign == 1 else item_group != g
            p_random = noise if sign == 1 else negative_noise
            for _ in range(count):
                pool = np.flatnonzero(inside) if rng.random() >= p_random else np.arange(n_items)
                pool = np.array([i for i in pool.tolist() if i not in used])
                if len(pool) == 0:
                    break
                item = int(rng.choice(pool))
                used.add(item)
                rows.append(Interaction(u, item, sign))
    return rows
