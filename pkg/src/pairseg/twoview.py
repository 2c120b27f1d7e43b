"""Two-view motion segmentation by sequential RANSAC over fundamental matrices.

Motions are extracted one at a time: RANSAC with 8-point minimal samples
finds the largest consensus set among unlabeled correspondences, the model
is refit on it and its inliers take the next label. Whatever is left after
``d`` rounds is labeled 0.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .model import LABEL_DTYPE

MIN_SAMPLE = 8
_RANK_TOL = 1e-10


class DegenerateConfigurationError(ValueError):
    """The correspondences do not determine a unique fundamental matrix."""


def _homogeneous(x: np.ndarray) -> np.ndarray:
    return np.column_stack([x, np.ones(len(x))])


def normalizing_transform(x: np.ndarray) -> np.ndarray:
    """Similarity taking points to zero mean and RMS distance sqrt(2) from the origin."""
    x = np.asarray(x, dtype=float)
    centroid = x.mean(axis=0)
    rms = math.sqrt(float(np.mean(np.sum((x - centroid) ** 2, axis=1))))
    if rms == 0.0:
        raise DegenerateConfigurationError("all points coincide")
    s = math.sqrt(2.0) / rms
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def _design(x1n: np.ndarray, x2n: np.ndarray) -> np.ndarray:
    # Rows of x2^T F x1 = 0 for row-major vec(F).
    u1, v1 = x1n[:, 0], x1n[:, 1]
    u2, v2 = x2n[:, 0], x2n[:, 1]
    return np.column_stack([u2 * u1, u2 * v1, u2, v2 * u1, v2 * v1, v2, u1, v1, np.ones_like(u1)])


def _enforce_rank2(f: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(f)
    s[2] = 0.0
    return (u * s) @ vt


def fit_fundamental(x1, x2) -> np.ndarray:
    """Normalized 8-point estimate of ``F`` with ``x2^T F x1 = 0``.

    Returns a rank-2 matrix with unit Frobenius norm. Raises
    :class:`DegenerateConfigurationError` on fewer than 8 correspondences or
    when the linear system has more than one null direction.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x1.shape != x2.shape or x1.ndim != 2 or x1.shape[1] != 2:
        raise ValueError("expected two (m, 2) arrays of equal shape")
    if len(x1) < MIN_SAMPLE:
        raise DegenerateConfigurationError(f"need at least {MIN_SAMPLE} correspondences, got {len(x1)}")
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(x2))):
        raise ValueError("coordinates must be finite")
    t1 = normalizing_transform(x1)
    t2 = normalizing_transform(x2)
    x1n = (_homogeneous(x1) @ t1.T)[:, :2]
    x2n = (_homogeneous(x2) @ t2.T)[:, :2]
    a = _design(x1n, x2n)
    if len(a) < 9:
        a = np.vstack([a, np.zeros((9 - len(a), 9))])
    _, s, vt = np.linalg.svd(a, full_matrices=False)
    if s[7] <= _RANK_TOL * s[0]:
        raise DegenerateConfigurationError("correspondences leave the epipolar system under-determined")
    f = _enforce_rank2(vt[-1].reshape(3, 3))
    f = t2.T @ f @ t1
    return f / np.linalg.norm(f)


def sampson_error(f, x1, x2) -> np.ndarray:
    """First-order geometric residual (squared, in coordinate units) of each
    correspondence. Points whose gradient vanishes get ``inf``."""
    f = np.asarray(f, dtype=float)
    h1 = _homogeneous(np.atleast_2d(np.asarray(x1, dtype=float)))
    h2 = _homogeneous(np.atleast_2d(np.asarray(x2, dtype=float)))
    fx1 = h1 @ f.T
    ftx2 = h2 @ f
    num = np.sum(h2 * fx1, axis=1) ** 2
    den = fx1[:, 0] ** 2 + fx1[:, 1] ** 2 + ftx2[:, 0] ** 2 + ftx2[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)


@njit(cache=True)
def _null_vector(a, out):
    # Gauss-Jordan with full pivoting on an 8x9 system; False if rank < 8.
    rows, cols = a.shape
    pivcol = np.empty(rows, dtype=np.int64)
    used = np.zeros(cols, dtype=np.bool_)
    scale = 0.0
    for i in range(rows):
        for j in range(cols):
            scale = max(scale, abs(a[i, j]))
    if scale == 0.0:
        return False
    for r in range(rows):
        best, bi, bj = -1.0, -1, -1
        for i in range(r, rows):
            for j in range(cols):
                if not used[j] and abs(a[i, j]) > best:
                    best, bi, bj = abs(a[i, j]), i, j
        if best <= _RANK_TOL * scale:
            return False
        if bi != r:
            for j in range(cols):
                tmp = a[r, j]
                a[r, j] = a[bi, j]
                a[bi, j] = tmp
        used[bj] = True
        pivcol[r] = bj
        piv = a[r, bj]
        for j in range(cols):
            a[r, j] /= piv
        for i in range(rows):
            if i != r and a[i, bj] != 0.0:
                factor = a[i, bj]
                for j in range(cols):
                    a[i, j] -= factor * a[r, j]
    free = 0
    for j in range(cols):
        if not used[j]:
            free = j
    out[:] = 0.0
    out[free] = 1.0
    for r in range(rows):
        out[pivcol[r]] = -a[r, free]
    return True


@njit(cache=True)
def _smallest_eigvec_sym3(a, v, out):
    # Cyclic Jacobi on a symmetric 3x3 matrix (overwritten); v is scratch.
    for r in range(3):
        for c in range(3):
            v[r, c] = 1.0 if r == c else 0.0
    for _ in range(30):
        off = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
        if off <= 1e-30 * (a[0, 0] ** 2 + a[1, 1] ** 2 + a[2, 2] ** 2 + off):
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            if a[p, q] == 0.0:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
            t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
            if theta == 0.0:
                t = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            for k in range(3):
                akp, akq = a[k, p], a[k, q]
                a[k, p] = c * akp - s * akq
                a[k, q] = s * akp + c * akq
            for k in range(3):
                apk, aqk = a[p, k], a[q, k]
                a[p, k] = c * apk - s * aqk
                a[q, k] = s * apk + c * aqk
            for k in range(3):
                vkp, vkq = v[k, p], v[k, q]
                v[k, p] = c * vkp - s * vkq
                v[k, q] = s * vkp + c * vkq
    best = 0
    for k in range(1, 3):
        if a[k, k] < a[best, best]:
            best = k
    for k in range(3):
        out[k] = v[k, best]


@njit(cache=True)
def _ransac_kernel(x1n, x2n, h1, h2, t1, t2, thr, confidence, max_iters, seed):
    np.random.seed(seed)
    m = x1n.shape[0]
    idx = np.arange(m)
    a = np.empty((MIN_SAMPLE, 9))
    vec = np.empty(9)
    fn = np.empty((3, 3))
    f = np.empty((3, 3))
    gram = np.empty((3, 3))
    jac = np.empty((3, 3))
    v = np.empty(3)
    best_f = np.zeros((3, 3))
    best_count = 0
    needed = max_iters
    log_fail = np.log(1.0 - confidence)
    it = 0
    while it < needed:
        it += 1
        # Partial Fisher-Yates: the first 8 entries of idx form the sample.
        for s in range(MIN_SAMPLE):
            k = s + np.random.randint(0, m - s)
            tmp = idx[s]
            idx[s] = idx[k]
            idx[k] = tmp
        for s in range(MIN_SAMPLE):
            p = idx[s]
            u1, v1, u2, v2 = x1n[p, 0], x1n[p, 1], x2n[p, 0], x2n[p, 1]
            a[s, 0] = u2 * u1
            a[s, 1] = u2 * v1
            a[s, 2] = u2
            a[s, 3] = v2 * u1
            a[s, 4] = v2 * v1
            a[s, 5] = v2
            a[s, 6] = u1
            a[s, 7] = v1
            a[s, 8] = 1.0
        if not _null_vector(a, vec):
            continue
        for r in range(3):
            for c in range(3):
                fn[r, c] = vec[3 * r + c]
        for r in range(3):
            for c in range(3):
                gram[r, c] = fn[0, r] * fn[0, c] + fn[1, r] * fn[1, c] + fn[2, r] * fn[2, c]
        _smallest_eigvec_sym3(gram, jac, v)
        # Nearest rank-2 matrix: remove the smallest singular direction.
        for r in range(3):
            fv = fn[r, 0] * v[0] + fn[r, 1] * v[1] + fn[r, 2] * v[2]
            for c in range(3):
                fn[r, c] -= fv * v[c]
        # Undo the normalization: f = t2^T fn t1.
        norm = 0.0
        for r in range(3):
            for c in range(3):
                acc = 0.0
                for k in range(3):
                    acc += t2[k, r] * (fn[k, 0] * t1[0, c] + fn[k, 1] * t1[1, c] + fn[k, 2] * t1[2, c])
                f[r, c] = acc
                norm += acc * acc
        norm = np.sqrt(norm)
        for r in range(3):
            for c in range(3):
                f[r, c] /= norm
        count = 0
        for p in range(m):
            # Stop once this hypothesis can no longer beat the best one.
            if count + (m - p) <= best_count:
                break
            a0 = f[0, 0] * h1[p, 0] + f[0, 1] * h1[p, 1] + f[0, 2]
            a1 = f[1, 0] * h1[p, 0] + f[1, 1] * h1[p, 1] + f[1, 2]
            a2 = f[2, 0] * h1[p, 0] + f[2, 1] * h1[p, 1] + f[2, 2]
            b0 = f[0, 0] * h2[p, 0] + f[1, 0] * h2[p, 1] + f[2, 0]
            b1 = f[0, 1] * h2[p, 0] + f[1, 1] * h2[p, 1] + f[2, 1]
            num = h2[p, 0] * a0 + h2[p, 1] * a1 + a2
            den = a0 * a0 + a1 * a1 + b0 * b0 + b1 * b1
            if den > 0.0 and num * num <= thr * den:
                count += 1
        if count > best_count:
            best_count = count
            best_f[:, :] = f
            ratio = count / m
            if ratio >= 1.0:
                needed = 1
            else:
                denom = np.log1p(-(ratio**MIN_SAMPLE))
                # Compare as floats; the estimate can exceed the int64 range.
                if denom < 0.0 and log_fail / denom < max_iters:
                    needed = max(1, int(np.ceil(log_fail / denom)))
    return best_f, best_count


def ransac_fundamental(
    x1: np.ndarray,
    x2: np.ndarray,
    inlier_threshold: float = 2.0,
    confidence: float = 0.999,
    max_iters: int = 2000,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray | None, np.ndarray]:
    """Single-model RANSAC. Returns ``(F, inlier mask)``; ``F`` is None if no
    consensus of at least 8 correspondences was found."""
    rng = np.random.default_rng() if rng is None else rng
    m = len(x1)
    mask = np.zeros(m, dtype=bool)
    if m < MIN_SAMPLE:
        return None, mask
    thr = float(inlier_threshold) ** 2
    t1 = normalizing_transform(x1)
    t2 = normalizing_transform(x2)
    h1, h2 = _homogeneous(x1), _homogeneous(x2)
    x1n = np.ascontiguousarray((h1 @ t1.T)[:, :2])
    x2n = np.ascontiguousarray((h2 @ t2.T)[:, :2])
    seed = int(rng.integers(0, 2**31 - 1))
    best_f, best_count = _ransac_kernel(x1n, x2n, h1, h2, t1, t2, thr, float(confidence), int(max_iters), seed)
    if best_count < MIN_SAMPLE:
        return None, mask

    f = best_f
    mask = sampson_error(f, x1, x2) <= thr
    for _ in range(3):
        try:
            refit = fit_fundamental(x1[mask], x2[mask])
        except DegenerateConfigurationError:
            break
        new_mask = sampson_error(refit, x1, x2) <= thr
        if new_mask.sum() < mask.sum():
            break
        stable = np.array_equal(new_mask, mask)
        f, mask = refit, new_mask
        if stable:
            break
    return f, mask


def sequential_ransac_segment(
    x1,
    x2,
    d: int,
    inlier_threshold: float = 2.0,
    confidence: float = 0.999,
    max_iters: int = 2000,
    rng_seed=0,
) -> np.ndarray:
    """Label correspondences ``x1[r] <-> x2[r]`` with motions ``1..d`` (0 = outlier).

    ``inlier_threshold`` is a distance in coordinate units compared with the
    square root of the Sampson residual. ``max_iters`` caps hypotheses per
    motion. ``rng_seed`` may be an int or a :class:`numpy.random.SeedSequence`.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    x1 = np.asarray(x1, dtype=float).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=float).reshape(-1, 2)
    if x1.shape != x2.shape:
        raise ValueError("x1 and x2 differ in shape")
    rng = np.random.default_rng(rng_seed)
    labels = np.zeros(len(x1), dtype=LABEL_DTYPE)
    remaining = np.arange(len(x1))
    for motion in range(1, d + 1):
        if len(remaining) < MIN_SAMPLE:
            break
        try:
            f, mask = ransac_fundamental(
                x1[remaining], x2[remaining], inlier_threshold, confidence, max_iters, rng
            )
        except DegenerateConfigurationError:
            break
        if f is None:
            break
        labels[remaining[mask]] = motion
        remaining = remaining[~mask]
    return labels
