"""Non-cyclic random walks that pick attention targets for every node.

For node ``v`` one walk starts along each incident edge ``(v, w0)``. Each
later step moves to a uniformly chosen neighbour (either sign) that the
trajectory has not visited yet, ``v`` included. Every visited node is
recorded together with the type id of the sign sequence leading to it
from ``v``. A walk ends after ``max_length`` edges or when it gets stuck.

Each origin node draws from its own generator seeded by ``(seed, v)``, so
the result does not depend on the order nodes are processed in.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass

import numpy as np

from .graph import SignedBipartiteGraph
from .pathenc import PathTypeTable, offset


@dataclass(frozen=True)
class SampleSet:
    """Occurrences grouped by origin: ``targets[indptr[v]:indptr[v+1]]`` is S_v."""

    indptr: np.ndarray
    targets: np.ndarray
    types: np.ndarray
    seed: int

    @property
    def origins(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.indptr) - 1), np.diff(self.indptr))

    def __len__(self) -> int:
        return len(self.targets)

    def of(self, v: int) -> list[tuple[int, int]]:
        lo, hi = self.indptr[v], self.indptr[v + 1]
        return list(zip(self.targets[lo:hi].tolist(), self.types[lo:hi].tolist()))


def _merged_neighbors(graph: SignedBipartiteGraph) -> tuple[list[list[int]], list[list[int]]]:
    """Per node: all neighbours sorted ascending, and the matching sign bits (1 = negative)."""
    nodes, bits = [], []
    for v in range(graph.order):
        pos, neg = graph.pos_adj(v), graph.neg_adj(v)
        both = np.concatenate([pos, neg])
        flag = np.concatenate([np.zeros(len(pos), np.int64), np.ones(len(neg), np.int64)])
        order = np.argsort(both, kind="stable")
        nodes.append(both[order].tolist())
        bits.append(flag[order].tolist())
    return nodes, bits


def _pick_unvisited(nbrs: list[int], visited: list[int], u: float) -> int | None:
    """Index into ``nbrs`` of the ``floor(u * free)``-th neighbour not in ``visited``."""
    taken = []
    for x in visited:
        p = bisect_left(nbrs, x)
        if p < len(nbrs) and nbrs[p] == x:
            taken.append(p)
    free = len(nbrs) - len(taken)
    if free == 0:
        return None
    idx = min(int(u * free), free - 1)
    for p in sorted(taken):
        if p <= idx:
            idx += 1
    return idx


def sample_neighborhoods(
    graph: SignedBipartiteGraph,
    table: PathTypeTable,
    seed: int,
    max_walks: int | None = None,
) -> SampleSet:
    nodes, bits = _merged_neighbors(graph)
    max_len = table.max_length
    counts = np.zeros(graph.order, dtype=np.int64)
    targets: list[int] = []
    types: list[int] = []
    for v in range(graph.order):
        nbrs_v = nodes[v]
        if not nbrs_v:
            continue
        rng = np.random.default_rng((seed, v))
        starts = range(len(nbrs_v))
        if max_walks is not None and len(nbrs_v) > max_walks:
            starts = sorted(rng.choice(len(nbrs_v), size=max_walks, replace=False).tolist())
        draws = rng.random(len(starts) * max_len).tolist()
        before = len(targets)
        for walk, start in enumerate(starts):
            cur = nbrs_v[start]
            code = bits[v][start]
            visited = [v, cur]
            targets.append(cur)
            types.append(offset(1) + code)
            for step in range(2, max_len + 1):
                idx = _pick_unvisited(nodes[cur], visited, draws[walk * max_len + step - 1])
                if idx is None:
                    break
                code = 2 * code + bits[cur][idx]
                cur = nodes[cur][idx]
                visited.append(cur)
                targets.append(cur)
                types.append(offset(step) + code)
        counts[v] = len(targets) - before
    indptr = np.zeros(graph.order + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return SampleSet(indptr, np.asarray(targets, dtype=np.int64), np.asarray(types, dtype=np.int64), seed)
