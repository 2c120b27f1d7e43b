"""Spanning-tree baseline.

A maximum-weight spanning tree over images (edge weight = number of inliers
of the pair) is grown with Kruskal's algorithm; labels are fixed at the root
and passed from parent to child along single tree edges.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .assignment import align_labels
from .model import MISSING, OUTLIER, Dataset, Pair, estimate_for, pair_graph_components


@dataclass(frozen=True)
class PairTree:
    num_nodes: int
    edges: tuple[Pair, ...]
    weights: tuple[int, ...]

    @property
    def total_weight(self) -> int:
        return sum(self.weights)

    def neighbors(self, node: int) -> list[tuple[int, int]]:
        """``(neighbor, weight)`` pairs of ``node`` in the tree."""
        out = []
        for (i, j), w in zip(self.edges, self.weights):
            if i == node:
                out.append((j, w))
            elif j == node:
                out.append((i, w))
        return sorted(out)


def inlier_count(labels) -> int:
    labels = np.asarray(labels)
    return int(np.count_nonzero((labels != OUTLIER) & (labels != MISSING)))


class _DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def max_spanning_tree(dataset: Dataset) -> PairTree:
    """Kruskal on the pair graph; equal weights prefer lexicographically smaller pairs."""
    n = dataset.num_images
    pairs = dataset.segmented_pairs
    if len(pair_graph_components(n, pairs)) > 1:
        raise ValueError("pair graph disconnected")
    weighted = sorted(((inlier_count(dataset.partials[p]), p) for p in pairs), key=lambda t: (-t[0], t[1]))
    dsu = _DisjointSet(n)
    chosen = []
    for w, (i, j) in weighted:
        if dsu.union(i, j):
            chosen.append(((i, j), w))
            if len(chosen) == n - 1:
                break
    chosen.sort()
    return PairTree(n, tuple(e for e, _ in chosen), tuple(w for _, w in chosen))


def propagate_baseline(dataset: Dataset, tree: PairTree, root: int = 0) -> list[np.ndarray]:
    """Label every image from a single tree edge.

    The root takes the estimate of its heaviest tree edge. A child ``j`` of
    ``i`` takes its estimate from pair ``(i, j)``, relabeled by the assignment
    between that pair's estimate of ``i`` and the labels already given to
    ``i``. Points unmatched along that edge are labeled 0.
    """
    d = dataset.num_motions
    n = dataset.num_images
    out: list[np.ndarray | None] = [None] * n
    if n == 1:
        return [np.zeros(dataset.num_points[0], dtype=np.uint16)]

    heaviest = min(tree.neighbors(root), key=lambda t: (-t[1], t[0]))[0]
    est = estimate_for(dataset, root, heaviest)
    out[root] = np.where(est == MISSING, OUTLIER, est).astype(est.dtype)

    queue = deque([root])
    while queue:
        i = queue.popleft()
        for j, _ in tree.neighbors(i):
            if out[j] is not None:
                continue
            local_to_i = align_labels(out[i], estimate_for(dataset, i, j), d)
            est_j = local_to_i(estimate_for(dataset, j, i))
            out[j] = np.where(est_j == MISSING, OUTLIER, est_j).astype(est_j.dtype)
            queue.append(j)
    return out


def segment_baseline(dataset: Dataset) -> list[np.ndarray]:
    return propagate_baseline(dataset, max_spanning_tree(dataset))
