"""Top-K ranking with Recall@K and NDCG@K.

Relevant items for a user are the positive interactions of the evaluated
split. Candidates exclude everything the user interacted with in earlier
splits (train for validation; train and validation for test), whatever
the sign. Negative interactions in the evaluated split are neither relevant
nor excluded.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from .errors import ConfigError, DataError
from .graph import DatasetSplit, Interaction
from .model import EmbeddingStack


@dataclass
class MetricsReport:
    k: int
    recall: float
    ndcg: float
    users_evaluated: int
    per_user: list[tuple[int, float, float]] = field(default_factory=list, repr=False)

    def rows(self) -> list[tuple[str, str]]:
        return [
            (f"recall@{self.k}", f"{self.recall:.10f}"),
            (f"ndcg@{self.k}", f"{self.ndcg:.10f}"),
            ("users_evaluated", str(self.users_evaluated)),
        ]

    def write_tsv(self, path: str | Path, per_user_path: str | Path | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("metric\tvalue\n")
            for key, value in self.rows():
                fh.write(f"{key}\t{value}\n")
        if per_user_path is not None:
            with open(per_user_path, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(f"user\trecall@{self.k}\tndcg@{self.k}\n")
                for u, r, g in self.per_user:
                    fh.write(f"{u}\t{r:.10f}\t{g:.10f}\n")


def top_k(scores: np.ndarray, exclusions: Iterable[int], k: int) -> list[int]:
    """Indices of the ``k`` best scores, descending, ties by ascending index."""
    if k < 1:
        raise ConfigError(f"K must be >= 1, got {k}")
    scores = np.asarray(scores, dtype=float)
    mask = np.ones(len(scores), dtype=bool)
    excl = np.fromiter(exclusions, dtype=np.int64)
    mask[excl] = False
    cand = np.flatnonzero(mask)
    neg = -scores[cand]
    if k < len(cand):
        kth = np.partition(neg, k - 1)[k - 1]
        keep = neg <= kth
        cand, neg = cand[keep], neg[keep]
    order = np.lexsort((cand, neg))
    return cand[order][:k].tolist()


def rank_items(stack: EmbeddingStack, u: int, exclusions: Iterable[int], k: int) -> list[int]:
    with torch.no_grad():
        row = (stack.items @ stack.users[u]).numpy()
    return top_k(row, exclusions, k)


def recall_at_k(top: Sequence[int], relevant: set[int]) -> float:
    if not relevant:
        raise DataError("recall needs at least one relevant item")
    return len(set(top) & relevant) / len(relevant)


def ndcg_at_k(top: Sequence[int], relevant: set[int], k: int | None = None) -> float:
    if not relevant:
        raise DataError("NDCG needs at least one relevant item")
    k = len(top) if k is None else k
    dcg = sum(1.0 / math.log2(p + 2) for p, item in enumerate(top[:k]) if item in relevant)
    idcg = sum(1.0 / math.log2(p + 2) for p in range(min(k, len(relevant))))
    return dcg / idcg


def _by_user(rows: Iterable[Interaction], positive_only: bool = False) -> dict[int, set[int]]:
    out: dict[int, set[int]] = defaultdict(set)
    for u, i, s in rows:
        if s == 1 or not positive_only:
            out[u].add(i)
    return out


def evaluate_scores(
    score_fn, data: DatasetSplit, k: int = 20, part: str = "test", keep_per_user: bool = False
) -> MetricsReport:
    """Metrics given ``score_fn(users) -> (len(users), m)`` score array."""
    if part == "test":
        seen = _by_user(data.train + data.validation)
    elif part == "val":
        seen = _by_user(data.train)
    else:
        raise ConfigError(f"can only evaluate 'val' or 'test', got {part!r}")
    relevant = _by_user(data.part(part), positive_only=True)
    users = sorted(relevant)
    if not users:
        raise DataError(f"no user has a positive {part} interaction")
    recalls, ndcgs, detail = [], [], []
    for start in range(0, len(users), 1024):
        chunk = users[start : start + 1024]
        block = score_fn(np.asarray(chunk))
        for u, row in zip(chunk, block):
            top = top_k(row, seen.get(u, ()), k)
            r, g = recall_at_k(top, relevant[u]), ndcg_at_k(top, relevant[u], k)
            recalls.append(r)
            ndcgs.append(g)
            if keep_per_user:
                detail.append((u, r, g))
    return MetricsReport(k, float(np.mean(recalls)), float(np.mean(ndcgs)), len(users), detail)


def evaluate(
    stack: EmbeddingStack, data: DatasetSplit, k: int = 20, part: str = "test", keep_per_user: bool = False
) -> MetricsReport:
    with torch.no_grad():
        users, items = stack.users.detach(), stack.items.detach()

    def score_fn(idx: np.ndarray) -> np.ndarray:
        return (users[torch.from_numpy(idx)] @ items.T).numpy()

    return evaluate_scores(score_fn, data, k, part, keep_per_user)
