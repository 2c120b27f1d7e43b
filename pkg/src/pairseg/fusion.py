"""Fusion of pairwise segmentations into per-image segmentations.

For every image, the estimates contributed by its pairs are brought to a
common label numbering by permutation synchronization and fused by a
per-point mode. A second synchronization over images then puts all images
under one global numbering.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assignment import Permutation, agreement_matrix, align_labels, solve_assignments
from .model import LABEL_DTYPE, MISSING, OUTLIER, Dataset, estimate_for, restrict_partial, validate_dataset
from .permsync import SyncProblem, synchronize_components

logger = logging.getLogger(__name__)

IGNORE_ZEROS = "ignore-zeros"
KEEP_ZEROS = "keep-zeros"


@dataclass
class EstimateSet:
    """Estimates of one image's segmentation, one row per partner image."""

    image: int
    partners: list[int]
    labels: np.ndarray  # (len(partners), p_i)

    def __len__(self) -> int:
        return len(self.partners)


@dataclass
class AlignmentInfo:
    permutations: list[Permutation]
    components: list[list[int]]
    edges: int

    @property
    def disconnected(self) -> bool:
        return len(self.components) > 1


@dataclass
class RunReport:
    classified_fraction: list[float] = field(default_factory=list)
    sync_residual: int = 0
    sync_edges: int = 0
    flags: list[str] = field(default_factory=list)

    @property
    def classified_percent(self) -> float:
        return 100.0 * float(np.mean(self.classified_fraction)) if self.classified_fraction else 0.0


def estimates_for_image(dataset: Dataset, image: int, restricted=None) -> EstimateSet:
    """Stack the estimates of ``image``; ``restricted`` optionally caches
    :func:`restrict_partial` per pair."""
    partners = dataset.partners(image)
    if not partners:
        raise ValueError(f"image {image} has no segmented pairs")
    if restricted is None:
        labels = np.stack([estimate_for(dataset, image, k) for k in partners])
    else:
        labels = np.stack(
            [restricted[(image, k)][0] if image < k else restricted[(k, image)][1] for k in partners]
        )
    return EstimateSet(image, partners, labels)


def _has_evidence(a: np.ndarray, b: np.ndarray, d: int) -> bool:
    return bool(agreement_matrix(a, b, d).sum() > 0)


def align_estimate_set(estimates: EstimateSet, d: int) -> tuple[EstimateSet, AlignmentInfo]:
    """Relabel every estimate into a common numbering.

    Edges join members sharing at least one point with motion labels in both;
    each carries the assignment mapping one member's labels onto the other's.
    If this graph is disconnected every component is synchronized on its own
    and the smaller ones are left in their own numbering; the returned
    :class:`AlignmentInfo` reports it.
    """
    rows = estimates.labels
    k = len(estimates)
    # counts[j, h] == agreement_matrix(rows[j], rows[h], d) for every member pair.
    one_hot = (rows[:, None, :] == np.arange(1, d + 1)[None, :, None]).reshape(k * d, -1).astype(float)
    counts = (one_hot @ one_hot.T).reshape(k, d, k, d).transpose(0, 2, 1, 3)
    hs, js = np.triu_indices(k, 1)
    keep = counts[js, hs].any(axis=(1, 2))
    hs, js = hs[keep], js[keep]
    # Equivalent to align_labels(rows[h], rows[j], d) for each kept pair.
    perms = solve_assignments(counts[js, hs])
    edges = [(int(h), int(j), p) for h, j, p in zip(hs, js, perms)]
    problem = SyncProblem(k, d, tuple(edges))
    perms, comps = synchronize_components(problem)
    # perms[k] maps the common numbering into member k's; undo it.
    aligned = _relabel_rows(rows, [p.inverse() for p in perms], d)
    info = AlignmentInfo(perms, comps, len(edges))
    return EstimateSet(estimates.image, list(estimates.partners), aligned), info


def _relabel_rows(rows: np.ndarray, perms: list[Permutation], d: int) -> np.ndarray:
    """Apply ``perms[m]`` to ``rows[m]``; outlier and missing entries are kept."""
    tables = np.zeros((len(perms), d + 1), dtype=np.int64)
    tables[:, 1:] = np.array([p.images for p in perms], dtype=np.int64).reshape(-1, d) + 1
    valid = rows != MISSING
    out = rows.copy()
    which = np.nonzero(valid)
    out[which] = tables[which[0], rows[which].astype(np.int64)]
    return out


def fuse_mode(aligned: EstimateSet, d: int, zero_policy: str = IGNORE_ZEROS) -> np.ndarray:
    """Per-point mode over aligned estimates.

    Missing entries never vote. Under ``ignore-zeros`` outlier votes are
    dropped as well and a point left without votes is labeled 0 (unknown).
    Ties go to the smallest label.
    """
    if zero_policy not in (IGNORE_ZEROS, KEEP_ZEROS):
        raise ValueError(f"unknown zero policy {zero_policy!r}")
    labels = np.asarray(aligned.labels)
    p = labels.shape[1]
    counts = np.zeros((p, d + 1), dtype=np.int64)
    rows, cols = np.nonzero(labels != MISSING)
    np.add.at(counts, (cols, labels[rows, cols].astype(np.int64)), 1)
    if zero_policy == IGNORE_ZEROS:
        counts[:, OUTLIER] = 0
        best = 1 + np.argmax(counts[:, 1:], axis=1)
        best[counts[:, 1:].sum(axis=1) == 0] = OUTLIER
    else:
        best = np.argmax(counts, axis=1)
    return best.astype(LABEL_DTYPE)


def segment_image(
    dataset: Dataset, image: int, zero_policy: str = IGNORE_ZEROS, restricted=None
) -> tuple[np.ndarray, AlignmentInfo]:
    d = dataset.num_motions
    aligned, info = align_estimate_set(estimates_for_image(dataset, image, restricted), d)
    return fuse_mode(aligned, d, zero_policy), info


def global_pair_permutation(
    dataset: Dataset, s_i: np.ndarray, s_j: np.ndarray, pair: tuple[int, int]
) -> Permutation | None:
    """Permutation mapping image ``j``'s numbering into image ``i``'s.

    Chains two assignments through the pair's local numbering. Returns None
    when either link has no co-observed motion-labeled point.
    """
    i, j = pair
    d = dataset.num_motions
    est_i = estimate_for(dataset, i, j)
    est_j = estimate_for(dataset, j, i)
    if not (_has_evidence(est_i, s_i, d) and _has_evidence(s_j, est_j, d)):
        return None
    local_to_i = align_labels(s_i, est_i, d)
    j_to_local = align_labels(est_j, s_j, d)
    return local_to_i * j_to_local


def _agreement_stack(sources, targets, d: int) -> np.ndarray:
    """``agreement_matrix(sources[t], targets[t], d)`` for every ``t`` in one pass."""
    if not sources:
        return np.zeros((0, d, d), dtype=np.int64)
    a = np.concatenate(sources).astype(np.int64)
    b = np.concatenate(targets).astype(np.int64)
    which = np.repeat(np.arange(len(sources)), [len(x) for x in sources])
    keep = (a >= 1) & (a <= d) & (b >= 1) & (b <= d)
    flat = (which[keep] * d + a[keep] - 1) * d + b[keep] - 1
    return np.bincount(flat, minlength=len(sources) * d * d).reshape(-1, d, d)


def _first_appearance_numbering(segmentations: list[np.ndarray], d: int) -> list[np.ndarray]:
    """Renumber motions in order of first appearance (image by image, point by
    point); unused motions take the remaining numbers in increasing order.
    This fixes the global label gauge, so the output does not depend on how
    the input pairs happened to number their labels."""
    flat = np.concatenate(segmentations) if segmentations else np.zeros(0, dtype=LABEL_DTYPE)
    motion = flat[(flat != OUTLIER) & (flat != MISSING)].astype(np.int64)
    seen, first = np.unique(motion, return_index=True)
    order = seen[np.argsort(first)].tolist()
    order += [a for a in range(1, d + 1) if a not in order]
    mapping = Permutation.from_labels({a: t + 1 for t, a in enumerate(order)})
    return [mapping(s) for s in segmentations]


def segment_all(
    dataset: Dataset, zero_policy: str = IGNORE_ZEROS
) -> tuple[list[np.ndarray], RunReport]:
    """Segment every image under a single global numbering.

    Motions are numbered by first appearance in the output.
    """
    check = validate_dataset(dataset)
    if not check.ok:
        raise ValueError("invalid dataset: " + "; ".join(check.violations))
    d, n = dataset.num_motions, dataset.num_images
    report = RunReport()
    restricted = {pair: restrict_partial(dataset, pair) for pair in dataset.segmented_pairs}
    local = []
    for i in range(n):
        s_i, info = segment_image(dataset, i, zero_policy, restricted)
        if info.disconnected:
            sizes = [len(c) for c in info.components]
            report.flags.append(f"image {i}: estimate graph disconnected, components {sizes}")
        local.append(s_i)

    # Same chaining as global_pair_permutation, with all assignments batched.
    sources, targets = [], []
    for i, j in dataset.segmented_pairs:
        est_i, est_j = restricted[(i, j)]
        sources += [est_i, local[j]]
        targets += [local[i], est_j]
    links = _agreement_stack(sources, targets, d)
    pairs, kept = [], []
    for e, (i, j) in enumerate(dataset.segmented_pairs):
        if links[2 * e].any() and links[2 * e + 1].any():
            pairs.append((i, j))
            kept += [2 * e, 2 * e + 1]
        else:
            report.flags.append(f"pair ({i},{j}): no evidence, omitted from global sync")
    solved = solve_assignments(links[kept].astype(float))
    edges = [(i, j, solved[2 * e] * solved[2 * e + 1]) for e, (i, j) in enumerate(pairs)]
    problem = SyncProblem(n, d, tuple(edges))
    perms, comps = synchronize_components(problem)
    if len(comps) > 1:
        report.flags.append(f"image graph disconnected after omissions, components {[len(c) for c in comps]}")
    report.sync_edges = len(edges)
    report.sync_residual = problem.residual(perms)

    result = _first_appearance_numbering([perms[i].inverse()(local[i]) for i in range(n)], d)
    report.classified_fraction = [float(np.mean(s != OUTLIER)) if len(s) else 1.0 for s in result]
    for flag in report.flags:
        logger.warning(flag)
    return result, report
