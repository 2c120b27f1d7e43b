"""Data model for segmentation from pairwise matches.

Labels are small unsigned integers. ``OUTLIER`` (0) marks a point classified
as a mismatch, motions are numbered ``1..d`` and ``MISSING`` marks a point
that has no correspondence in a given pair.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

LABEL_DTYPE = np.uint16
OUTLIER = 0
MISSING = int(np.iinfo(LABEL_DTYPE).max)

Pair = tuple[int, int]


def as_labels(values) -> np.ndarray:
    """Convert a sequence of ints (``None`` meaning missing) to a label array."""
    out = [MISSING if v is None else int(v) for v in values]
    return np.asarray(out, dtype=LABEL_DTYPE)


def is_motion(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    return (labels != OUTLIER) & (labels != MISSING)


def _frozen(arr, dtype) -> np.ndarray:
    arr = np.array(arr, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """Images, pairwise matches and their partial segmentations.

    Attributes:
        num_motions: number of motions ``d``.
        num_points: point count ``p_i`` per image; ``n = len(num_points)``.
        matches: ``(i, j) -> (m_ij, 2)`` int array of (point in i, point in j), ``i < j``.
        partials: ``(i, j) -> (m_ij,)`` label array in a pair-local numbering.
    """

    num_motions: int
    num_points: tuple[int, ...]
    matches: dict[Pair, np.ndarray] = field(default_factory=dict)
    partials: dict[Pair, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "num_points", tuple(int(p) for p in self.num_points))
        object.__setattr__(
            self,
            "matches",
            {_pair(k): _frozen(np.reshape(v, (-1, 2)), np.int64) for k, v in self.matches.items()},
        )
        object.__setattr__(
            self, "partials", {_pair(k): _frozen(v, LABEL_DTYPE) for k, v in self.partials.items()}
        )

    @property
    def num_images(self) -> int:
        return len(self.num_points)

    @property
    def total_points(self) -> int:
        return sum(self.num_points)

    @property
    def segmented_pairs(self) -> list[Pair]:
        return sorted(self.partials)

    def partners(self, image: int) -> list[int]:
        """Images sharing a segmented pair with ``image``, in increasing order."""
        out = []
        for i, j in self.segmented_pairs:
            if i == image:
                out.append(j)
            elif j == image:
                out.append(i)
        return sorted(out)

    def with_partials(self, partials: dict[Pair, np.ndarray]) -> "Dataset":
        return Dataset(self.num_motions, self.num_points, self.matches, partials)

    def with_matches(self, matches: dict[Pair, np.ndarray]) -> "Dataset":
        return Dataset(self.num_motions, self.num_points, matches, self.partials)


def _pair(key) -> Pair:
    i, j = (int(key[0]), int(key[1]))
    return (i, j)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def pair_graph_components(num_nodes: int, edges) -> list[list[int]]:
    """Connected components (sorted, ordered by smallest member) of an undirected graph."""
    adj: list[set[int]] = [set() for _ in range(num_nodes)]
    for h, k in edges:
        adj[h].add(k)
        adj[k].add(h)
    seen = [False] * num_nodes
    comps = []
    for start in range(num_nodes):
        if seen[start]:
            continue
        seen[start] = True
        comp = [start]
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def validate_dataset(dataset: Dataset) -> ValidationReport:
    """Collect every invariant violation of ``dataset``; never raises."""
    report = ValidationReport()
    bad = report.violations
    n, d = dataset.num_images, dataset.num_motions
    if d < 1:
        bad.append(f"number of motions must be >= 1, got {d}")
    if n < 1:
        bad.append("dataset has no images")
    for idx, p in enumerate(dataset.num_points):
        if p < 0:
            bad.append(f"negative point count for image {idx}")

    for (i, j), m in sorted(dataset.matches.items()):
        if not (0 <= i < j < n):
            bad.append(f"invalid pair ({i},{j})")
            continue
        for side, img in ((0, i), (1, j)):
            col = m[:, side]
            if np.any((col < 0) | (col >= dataset.num_points[img])):
                bad.append(f"point index out of range in pair ({i},{j}) for image {img}")
                continue
            if len(col) and np.bincount(col).max() > 1:
                bad.append(f"duplicate match in pair ({i},{j}) for image {img}")

    for (i, j), labels in sorted(dataset.partials.items()):
        if (i, j) not in dataset.matches:
            bad.append(f"partial segmentation without match list ({i},{j})")
            continue
        if len(labels) != len(dataset.matches[(i, j)]):
            bad.append(f"length mismatch ({i},{j})")
        if np.any(labels > d):
            bad.append(f"label out of range in pair ({i},{j})")

    valid_pairs = [(i, j) for i, j in dataset.partials if 0 <= i < j < n]
    if n > 0 and len(pair_graph_components(n, valid_pairs)) > 1:
        bad.append("pair graph disconnected")
    return report


def restrict_partial(dataset: Dataset, pair: Pair) -> tuple[np.ndarray, np.ndarray]:
    """Scatter the partial segmentation of ``pair`` onto both images.

    Returns the estimate vectors for image ``i`` and image ``j``: full-length
    label arrays holding the pair's label at matched points and ``MISSING``
    elsewhere.
    """
    pair = _pair(pair)
    if pair not in dataset.partials or pair not in dataset.matches:
        raise KeyError(f"unknown pair {pair}")
    i, j = pair
    matches = dataset.matches[pair]
    labels = dataset.partials[pair]
    est_i = np.full(dataset.num_points[i], MISSING, dtype=LABEL_DTYPE)
    est_j = np.full(dataset.num_points[j], MISSING, dtype=LABEL_DTYPE)
    est_i[matches[:, 0]] = labels
    est_j[matches[:, 1]] = labels
    return est_i, est_j


def estimate_for(dataset: Dataset, image: int, partner: int) -> np.ndarray:
    """Estimate vector of ``image`` derived from its pair with ``partner``."""
    if image < partner:
        return restrict_partial(dataset, (image, partner))[0]
    return restrict_partial(dataset, (partner, image))[1]
