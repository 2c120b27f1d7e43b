"""Label permutations and the linear assignment problem.

Motion labels ``1..d`` are relabeled by :class:`Permutation`; the outlier and
missing sentinels are fixed points. :func:`solve_assignment` is a
Kuhn-Munkres (Hungarian) solver returning the maximum-weight permutation,
with ties resolved towards the lexicographically smallest one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import LABEL_DTYPE, MISSING, OUTLIER


@dataclass(frozen=True)
class Permutation:
    """Bijection on motion labels, stored zero-based.

    ``images[a]`` is the zero-based image of motion ``a + 1``; so motion label
    ``l`` is sent to ``images[l - 1] + 1``.
    """

    images: tuple[int, ...]

    def __post_init__(self):
        images = tuple(map(int, self.images))
        if set(images) != set(range(len(images))):
            raise ValueError(f"not a permutation: {images}")
        object.__setattr__(self, "images", images)

    @classmethod
    def _unchecked(cls, images: tuple[int, ...]) -> "Permutation":
        # For solver output that is a permutation by construction.
        perm = object.__new__(cls)
        object.__setattr__(perm, "images", images)
        return perm

    @classmethod
    def identity(cls, d: int) -> "Permutation":
        return cls(tuple(range(d)))

    @classmethod
    def from_labels(cls, mapping: dict[int, int]) -> "Permutation":
        """Build from a one-based ``{label: image}`` dict covering ``1..d``."""
        d = len(mapping)
        return cls(tuple(mapping[a + 1] - 1 for a in range(d)))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Permutation":
        """Inverse of :meth:`matrix`; ``matrix`` must be a 0/1 permutation matrix."""
        matrix = np.asarray(matrix)
        return cls(tuple(int(np.argmax(matrix[:, a])) for a in range(matrix.shape[1])))

    @property
    def size(self) -> int:
        return len(self.images)

    def is_identity(self) -> bool:
        return all(a == b for a, b in enumerate(self.images))

    def lookup(self) -> np.ndarray:
        """Label lookup table covering ``0..d`` (0 maps to itself)."""
        return np.concatenate(([OUTLIER], np.asarray(self.images, dtype=np.int64) + 1))

    def __call__(self, labels) -> np.ndarray:
        """Relabel an array of labels; outlier and missing entries are kept."""
        labels = np.asarray(labels, dtype=LABEL_DTYPE)
        out = labels.copy()
        valid = labels != MISSING
        out[valid] = self.lookup()[labels[valid]]
        return out

    def __mul__(self, other: "Permutation") -> "Permutation":
        """Composition: ``(self * other)(x) == self(other(x))``."""
        if other.size != self.size:
            raise ValueError("permutation sizes differ")
        return Permutation(tuple(self.images[b] for b in other.images))

    def inverse(self) -> "Permutation":
        inv = [0] * self.size
        for a, b in enumerate(self.images):
            inv[b] = a
        return Permutation(tuple(inv))

    def matrix(self) -> np.ndarray:
        """Permutation matrix ``M`` with ``M[pi(a), a] = 1``, so ``M(p * q) = M(p) @ M(q)``."""
        m = np.zeros((self.size, self.size))
        m[list(self.images), list(range(self.size))] = 1.0
        return m

    def __str__(self) -> str:
        return "(" + ", ".join(f"{a + 1}->{b + 1}" for a, b in enumerate(self.images)) + ")"


def agreement_matrix(a, b, d: int) -> np.ndarray:
    """Co-occurrence counts of motion labels: entry ``(x, y)`` counts points
    with ``a == x + 1`` and ``b == y + 1``. Outlier/missing positions are skipped."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    keep = (a >= 1) & (a <= d) & (b >= 1) & (b <= d)
    flat = (a[keep] - 1) * d + (b[keep] - 1)
    counts = np.bincount(flat, minlength=d * d).reshape(d, d)
    return counts


@njit(cache=True)
def _hungarian_min(cost):
    # Shortest augmenting path with potentials, O(n^3). Returns the row->col
    # assignment and duals u (rows), v (cols) with u[i] + v[j] <= cost[i, j].
    n = cost.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match_col = np.zeros(n + 1, dtype=np.int64)  # match_col[j] = row (1-based) on column j
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        match_col[0] = i
        j0 = 0
        minv[:] = inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = match_col[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while True:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        assign[match_col[j] - 1] = j - 1
    return assign, u[1:], v[1:]


@njit(cache=True)
def _augment(allowed, r, free_col, seen, match):
    for c in range(allowed.shape[1]):
        if allowed[r, c] and free_col[c] and not seen[c]:
            seen[c] = True
            if match[c] < 0 or _augment(allowed, match[c], free_col, seen, match):
                match[c] = r
                return True
    return False


@njit(cache=True)
def _has_perfect_matching(allowed, first_row, free_col):
    # Kuhn's algorithm: can rows first_row.. be matched into the free columns?
    n = allowed.shape[0]
    match = np.full(n, -1, dtype=np.int64)
    seen = np.zeros(n, dtype=np.bool_)
    for r in range(first_row, n):
        seen[:] = False
        if not _augment(allowed, r, free_col, seen, match):
            return False
    return True


@njit(cache=True)
def _lex_max_assignment(w, tol):
    n = w.shape[0]
    cost = -w
    rows, u, v = _hungarian_min(cost)
    # Every optimal assignment lies in the equality subgraph of an optimal dual.
    tight = np.empty((n, n), dtype=np.bool_)
    unique = True
    for a in range(n):
        deg = 0
        for b in range(n):
            tight[a, b] = abs(cost[a, b] - u[a] - v[b]) <= tol
            deg += tight[a, b]
        unique = unique and deg == 1
    if unique:
        # The subgraph is a single perfect matching, so the optimum is unique.
        return rows
    free_col = np.ones(n, dtype=np.bool_)
    images = np.full(n, -1, dtype=np.int64)
    for a in range(n):
        for b in range(n):
            if not (free_col[b] and tight[a, b]):
                continue
            free_col[b] = False
            if _has_perfect_matching(tight, a + 1, free_col):
                images[a] = b
                break
            free_col[b] = True
    return images


def solve_assignment(weights) -> Permutation:
    """Maximum-weight permutation ``pi`` of a square matrix: maximizes
    ``sum_a weights[a, pi(a)]``. Ties go to the lexicographically smallest
    ``(pi(1), ..., pi(d))``."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"weights must be square, got shape {w.shape}")
    d = w.shape[0]
    if d == 0:
        return Permutation(())
    largest = float(np.abs(w).max())
    if not math.isfinite(largest):
        raise ValueError("weights must be finite")
    if d == 1:
        return Permutation((0,))
    tol = 1e-9 * max(1.0, largest) * d
    images = _lex_max_assignment(np.ascontiguousarray(w), tol)
    if images.min() < 0:  # pragma: no cover - guarded by duality
        raise RuntimeError("assignment tie-breaking failed")
    return Permutation(tuple(images.tolist()))


@njit(cache=True)
def _lex_max_batch(ws, tols):
    out = np.empty((ws.shape[0], ws.shape[1]), dtype=np.int64)
    for t in range(ws.shape[0]):
        out[t] = _lex_max_assignment(ws[t], tols[t])
    return out


def solve_assignments(weights) -> list[Permutation]:
    """:func:`solve_assignment` applied to each matrix of a ``(t, d, d)`` stack."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 3 or w.shape[1] != w.shape[2]:
        raise ValueError(f"weights must have shape (t, d, d), got {w.shape}")
    t, d = w.shape[0], w.shape[1]
    if t == 0 or d <= 1:
        if not np.isfinite(w).all():
            raise ValueError("weights must be finite")
        return [Permutation(tuple(range(d))) for _ in range(t)]
    largest = np.abs(w).max(axis=(1, 2))
    if not np.isfinite(largest).all():
        raise ValueError("weights must be finite")
    images = _lex_max_batch(np.ascontiguousarray(w), 1e-9 * np.maximum(1.0, largest) * d)
    if images.min() < 0:  # pragma: no cover - guarded by duality
        raise RuntimeError("assignment tie-breaking failed")
    return [Permutation._unchecked(tuple(row)) for row in images.tolist()]


def assignment_weight(weights, perm: Permutation) -> float:
    w = np.asarray(weights, dtype=float)
    return float(w[np.arange(perm.size), list(perm.images)].sum())


def align_labels(target, source, d: int) -> Permutation:
    """Permutation that relabels ``source`` to best agree with ``target``.

    Agreement is counted over points carrying motion labels in both vectors;
    with no such point the identity is returned.
    """
    return solve_assignment(agreement_matrix(source, target, d))
