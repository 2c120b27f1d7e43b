"""Synthetic scenes, match corruption, simulated pairwise segmentations and metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .assignment import Permutation, agreement_matrix, solve_assignment
from .model import LABEL_DTYPE, OUTLIER, Dataset, Pair, estimate_for


# --------------------------------------------------------------------------
# Scene generation


@dataclass(frozen=True)
class SceneConfig:
    num_images: int = 20
    num_motions: int = 2
    points_per_body: int = 100
    noise_sigma: float = 0.5
    focal: float = 800.0
    image_size: tuple[int, int] = (640, 480)
    arc_degrees: float = 40.0
    radius: float = 12.0
    body_speed: float = 0.5
    body_rotation_deg: float = 6.0
    static_background: bool = True
    # Per-body overrides (length num_motions); None keeps the defaults above.
    body_speeds: tuple[float, ...] | None = None
    body_rotations_deg: tuple[float, ...] | None = None


@dataclass
class SyntheticScene:
    """Rigid bodies observed by a moving camera.

    ``point_ids[i][r]`` is the physical point behind point ``r`` of image
    ``i``; ``labels[i]`` holds the ground-truth motion (1..d) of every image point.
    """

    config: SceneConfig
    cameras: np.ndarray  # (n, 3, 4)
    body_of_point: np.ndarray  # (P,) zero-based body per physical point
    world_points: np.ndarray  # (n, P, 3) positions at every frame
    image_points: list[np.ndarray]
    point_ids: list[np.ndarray]
    labels: list[np.ndarray] = field(default_factory=list)

    @property
    def num_images(self) -> int:
        return len(self.image_points)

    def tracks(self) -> list[list[tuple[int, int]]]:
        """One track per physical point: its ``(image, point)`` slots."""
        slots: list[list[tuple[int, int]]] = [[] for _ in range(len(self.body_of_point))]
        for i, ids in enumerate(self.point_ids):
            for r, q in enumerate(ids):
                slots[q].append((i, r))
        return slots

    def track_labels(self) -> np.ndarray:
        return (self.body_of_point + 1).astype(LABEL_DTYPE)

    def entry_truth(self, pair: Pair, matches: np.ndarray) -> np.ndarray:
        """Ground-truth label of each match entry; 0 for wrong correspondences."""
        i, j = pair
        qi = self.point_ids[i][matches[:, 0]]
        qj = self.point_ids[j][matches[:, 1]]
        truth = self.labels[i][matches[:, 0]].copy()
        truth[qi != qj] = OUTLIER
        return truth


def _look_at(center: np.ndarray, target: np.ndarray) -> np.ndarray:
    z = target - center
    z /= np.linalg.norm(z)
    up = np.array([0.0, -1.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def _body_poses(axis, rate_deg, velocity, center, frames):
    rots = Rotation.from_rotvec(np.outer(frames * math.radians(rate_deg), axis))
    trans = center[None, :] + frames[:, None] * velocity[None, :]
    return rots.as_matrix(), trans


def generate_scene(config: SceneConfig = SceneConfig(), seed: int = 0) -> tuple[SyntheticScene, Dataset]:
    """Project ``d`` independently moving rigid bodies into ``n`` perspective views.

    Body 1 is the static background (unless disabled); the others translate and
    rotate at constant rates. Every point is seen in every image, so all pairs
    get exact correspondences. Point order is shuffled per image.
    """
    n, d, per = config.num_images, config.num_motions, config.points_per_body
    if n < 2 or d < 1 or per < 1:
        raise ValueError("need num_images >= 2, num_motions >= 1, points_per_body >= 1")
    rng = np.random.default_rng(seed)
    frames = np.arange(n) - (n - 1) / 2.0

    speeds = list(config.body_speeds) if config.body_speeds is not None else None
    rotations = list(config.body_rotations_deg) if config.body_rotations_deg is not None else None
    for name, seq in (("body_speeds", speeds), ("body_rotations_deg", rotations)):
        if seq is not None and len(seq) != d:
            raise ValueError(f"{name} must have {d} entries")

    local, poses = [], []
    for b in range(d):
        background = b == 0 and config.static_background
        if background:
            pts = rng.uniform([-5.0, -3.5, -2.0], [5.0, 3.5, 2.0], size=(per, 3))
            center = np.zeros(3)
        else:
            pts = rng.uniform(-1.0, 1.0, size=(per, 3))
            center = rng.uniform([-1.5, -1.0, -1.0], [1.5, 1.0, 1.0])
        default_speed = 0.0 if background else config.body_speed
        default_rot = 0.0 if background else config.body_rotation_deg
        speed = speeds[b] if speeds is not None else default_speed
        rot = rotations[b] if rotations is not None else default_rot
        direction = rng.standard_normal(3)
        axis = rng.standard_normal(3)
        poses.append(
            _body_poses(axis / np.linalg.norm(axis), rot, speed * direction / np.linalg.norm(direction), center, frames)
        )
        local.append(pts)

    for a in range(d):
        for b in range(a + 1, d):
            ra, ta = poses[a]
            rb, tb = poses[b]
            rel_r = np.einsum("tji,tjk->tik", ra, rb)
            rel_t = np.einsum("tji,tj->ti", ra, tb - ta)
            if np.allclose(rel_r, rel_r[0], atol=1e-12) and np.allclose(rel_t, rel_t[0], atol=1e-12):
                raise ValueError(f"bodies {a + 1} and {b + 1} move identically; motions are not distinct")

    body_of_point = np.repeat(np.arange(d), per)
    world = np.empty((n, d * per, 3))
    for b, ((rots, trans), pts) in enumerate(zip(poses, local)):
        world[:, b * per:(b + 1) * per] = np.einsum("tij,pj->tpi", rots, pts) + trans[:, None, :]

    w, h = config.image_size
    k_mat = np.array([[config.focal, 0.0, w / 2.0], [0.0, config.focal, h / 2.0], [0.0, 0.0, 1.0]])
    angles = np.radians(np.linspace(-config.arc_degrees / 2.0, config.arc_degrees / 2.0, n))
    cameras = np.empty((n, 3, 4))
    image_points, point_ids, labels = [], [], []
    for t in range(n):
        c = config.radius * np.array([math.sin(angles[t]), 0.0, -math.cos(angles[t])])
        r = _look_at(c, np.zeros(3))
        cameras[t] = k_mat @ np.column_stack([r, -r @ c])
        hom = np.column_stack([world[t], np.ones(d * per)]) @ cameras[t].T
        if np.any(hom[:, 2] <= 0):
            raise ValueError("a point fell behind a camera; adjust the scene configuration")
        xy = hom[:, :2] / hom[:, 2:3]
        xy = xy + config.noise_sigma * rng.standard_normal(xy.shape)
        order = rng.permutation(d * per)
        image_points.append(xy[order])
        point_ids.append(order)
        labels.append((body_of_point[order] + 1).astype(LABEL_DTYPE))

    matches = {}
    for i in range(n):
        for j in range(i + 1, n):
            inv_j = np.empty(d * per, dtype=np.int64)
            inv_j[point_ids[j]] = np.arange(d * per)
            matches[(i, j)] = np.column_stack([np.arange(d * per), inv_j[point_ids[i]]])

    scene = SyntheticScene(config, cameras, body_of_point, world, image_points, point_ids, labels)
    dataset = Dataset(d, tuple(len(x) for x in image_points), matches, {})
    return scene, dataset


def match_coordinates(scene: SyntheticScene, pair: Pair, matches: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    i, j = pair
    return scene.image_points[i][matches[:, 0]], scene.image_points[j][matches[:, 1]]


# --------------------------------------------------------------------------
# Corruption and simulated pairwise segmentation


def _derangement(k: int, rng: np.random.Generator) -> np.ndarray:
    if k < 2:
        return np.arange(k)
    while True:
        perm = rng.permutation(k)
        if not np.any(perm == np.arange(k)):
            return perm


def corrupt_matches(matches, fraction: float, seed=0) -> np.ndarray:
    """Switch ``floor(fraction * m)`` randomly chosen correspondences.

    The j-side indices of the chosen entries are shuffled among themselves by
    a derangement, so each switched entry gets a new partner and the list
    stays one-to-one.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    matches = np.array(matches, dtype=np.int64).reshape(-1, 2)
    m = len(matches)
    k = int(math.floor(fraction * m + 1e-9))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(m, size=k, replace=False))
    out = matches.copy()
    out[chosen, 1] = matches[chosen[_derangement(k, rng)], 1]
    return out


def corrupt_dataset(dataset: Dataset, fraction: float, seed=0) -> Dataset:
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    pairs = sorted(dataset.matches)
    children = seq.spawn(len(pairs))
    matches = {p: corrupt_matches(dataset.matches[p], fraction, c) for p, c in zip(pairs, children)}
    return dataset.with_matches(matches)


def simulate_pairwise(
    dataset: Dataset,
    truth: list[np.ndarray],
    flip_rate: float = 0.0,
    outlier_rate: float = 0.0,
    missing_rate: float = 0.0,
    seed=0,
) -> Dataset:
    """Synthesize partial segmentations from ground truth.

    Each pair's labels are the i-side truth under a fresh random label
    permutation; then each entry independently is flipped to another motion
    (``flip_rate``), set to 0 (``outlier_rate``) or dropped from the match
    list (``missing_rate``). Later events take precedence.
    """
    for rate in (flip_rate, outlier_rate, missing_rate):
        if not 0.0 <= rate <= 1.0:
            raise ValueError("rates must lie in [0, 1]")
    d = dataset.num_motions
    rng = np.random.default_rng(seed)
    matches, partials = {}, {}
    for pair in sorted(dataset.matches):
        m = dataset.matches[pair]
        labels = np.asarray(truth[pair[0]])[m[:, 0]].astype(np.int64)
        perm = rng.permutation(d)
        labels = perm[labels - 1] + 1
        u_flip, u_out, u_miss = rng.random((3, len(m)))
        if d > 1:
            flip = u_flip < flip_rate
            shift = rng.integers(1, d, size=len(m))
            labels = np.where(flip, (labels - 1 + shift) % d + 1, labels)
        labels[u_out < outlier_rate] = OUTLIER
        keep = u_miss >= missing_rate
        if not keep.any():
            continue
        matches[pair] = m[keep]
        partials[pair] = labels[keep].astype(LABEL_DTYPE)
    return Dataset(d, dataset.num_points, matches, partials)


# --------------------------------------------------------------------------
# Metrics


@dataclass(frozen=True)
class PointScore:
    error: float  # percent of classified points that are wrong; NaN if none classified
    classified: float  # percent of points with a nonzero label
    wrong: int
    num_classified: int
    num_points: int


def _flat(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.ravel()
    return np.concatenate([np.asarray(a).ravel() for a in x]) if len(x) else np.zeros(0)


def best_label_mapping(pred, gt, d: int) -> Permutation:
    """Relabeling of ``pred`` that agrees with ``gt`` on the most points."""
    return solve_assignment(agreement_matrix(_flat(pred), _flat(gt), d))


def misclassification_error_points(pred, gt, d: int, mapping: Permutation | None = None) -> PointScore:
    """Error over classified (nonzero) points after the best global relabeling."""
    p = _flat(pred).astype(LABEL_DTYPE)
    g = _flat(gt)
    if p.shape != g.shape:
        raise ValueError("prediction and ground truth differ in shape")
    if mapping is None:
        mapping = best_label_mapping(p, g, d)
    classified = p != OUTLIER
    n_cls = int(classified.sum())
    wrong = int(np.sum(classified & (mapping(p) != g)))
    err = 100.0 * wrong / n_cls if n_cls else float("nan")
    frac = 100.0 * n_cls / len(p) if len(p) else 0.0
    return PointScore(err, frac, wrong, n_cls, len(p))


def label_tracks(tracks, segmentations, d: int) -> np.ndarray:
    """Mode of each track's point labels; zeros only win when nothing else is present."""
    out = np.zeros(len(tracks), dtype=LABEL_DTYPE)
    for t, slots in enumerate(tracks):
        votes = np.array([segmentations[i][r] for i, r in slots], dtype=np.int64)
        votes = votes[(votes >= 1) & (votes <= d)]
        if len(votes):
            out[t] = int(np.argmax(np.bincount(votes, minlength=d + 1)[1:])) + 1
    return out


def validate_tracks(tracks, num_points) -> list[str]:
    problems = []
    seen = set()
    for t, slots in enumerate(tracks):
        images = [i for i, _ in slots]
        if len(set(images)) != len(images):
            problems.append(f"track {t} has two points in one image")
        for i, r in slots:
            if not (0 <= i < len(num_points) and 0 <= r < num_points[i]):
                problems.append(f"track {t} slot ({i},{r}) out of range")
            if (i, r) in seen:
                problems.append(f"slot ({i},{r}) shared by two tracks")
            seen.add((i, r))
    return problems


def misclassification_error_tracks(pred, gt, d: int) -> float:
    """Percent of wrongly labeled tracks; zero-labeled tracks count as errors."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if len(pred) == 0:
        return 0.0
    mapping = best_label_mapping(pred, gt, d)
    return 100.0 * float(np.mean((pred == OUTLIER) | (mapping(pred) != gt)))


def pair_errors(dataset: Dataset, entry_truth: dict[Pair, np.ndarray]) -> dict[Pair, float]:
    """Misclassification error (percent of nonzero entries) of every partial
    segmentation against per-entry truth, each under its own best relabeling."""
    d = dataset.num_motions
    return {
        pair: misclassification_error_points(dataset.partials[pair], entry_truth[pair], d).error
        for pair in dataset.segmented_pairs
    }


def vote_composition(
    dataset: Dataset, image: int, truth: np.ndarray, entry_truth: dict[Pair, np.ndarray]
) -> np.ndarray:
    """Per point of ``image``: counts of (correct, wrong, outlier) pairwise votes.

    Each pair's labels are first relabeled by the mapping that best fits that
    pair's entry truth.
    """
    d = dataset.num_motions
    counts = np.zeros((dataset.num_points[image], 3), dtype=np.int64)
    for k in dataset.partners(image):
        pair = (min(image, k), max(image, k))
        mapping = best_label_mapping(dataset.partials[pair], entry_truth[pair], d)
        est = mapping(estimate_for(dataset, image, k))
        seen = est <= d
        counts[:, 2] += seen & (est == OUTLIER)
        counts[:, 0] += seen & (est != OUTLIER) & (est == truth)
        counts[:, 1] += seen & (est != OUTLIER) & (est != truth)
    return counts


def write_csv(path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def histogram_rows(values, bin_width: float = 5.0) -> list[tuple[float, float, int]]:
    """Histogram of percentages in ``[0, 100]`` as ``(low, high, count)`` rows."""
    edges = np.arange(0.0, 100.0 + bin_width, bin_width)
    vals = np.asarray([v for v in values if not math.isnan(v)])
    counts, _ = np.histogram(vals, bins=edges)
    return [(float(lo), float(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
