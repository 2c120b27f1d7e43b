"""Spectral permutation synchronization.

Given relative permutations ``P_hk`` on the edges of a graph, recover one
permutation ``P_k`` per node with ``P_hk = P_h * P_k.inverse()``. The relative
permutations are stacked into a symmetric block matrix whose ``d`` leading
eigenvectors span the stacked absolute permutations; each node's block is
then rounded to the nearest permutation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .assignment import Permutation, solve_assignments
from .model import pair_graph_components

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
_PRODUCTS_PER_STEP = 4
# Up to this size the step operator is formed explicitly by repeated squaring.
_SQUARING_MAX_DIM = 256
_SQUARINGS = 4


class EigenConvergenceError(RuntimeError):
    """The eigen-solver failed to meet its residual contract."""


@dataclass(frozen=True)
class SyncProblem:
    """Nodes ``0..num_nodes-1``; each edge ``(h, k, P_hk)`` maps node ``k``'s
    numbering into node ``h``'s. The reverse edge is implied."""

    num_nodes: int
    d: int
    edges: tuple[tuple[int, int, Permutation], ...]

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple((int(h), int(k), p) for h, k, p in self.edges))

    def check(self, require_connected: bool = True) -> None:
        if self.edges and not self._edges_look_valid():
            self._explain_bad_edges()
        if require_connected and len(self.components()) > 1:
            raise ValueError("synchronization graph is disconnected")

    def _edges_look_valid(self) -> bool:
        if any(p.size != self.d for _, _, p in self.edges):
            return False
        hs, ks, _ = _edge_arrays(self)
        lo, hi = np.minimum(hs, ks), np.maximum(hs, ks)
        in_range = lo.min() >= 0 and hi.max() < self.num_nodes
        return bool(in_range and (lo < hi).all() and len(np.unique(lo * self.num_nodes + hi)) == len(lo))

    def _explain_bad_edges(self) -> None:
        seen = set()
        for h, k, perm in self.edges:
            if h == k:
                raise ValueError(f"self-loop at node {h}")
            if not (0 <= h < self.num_nodes and 0 <= k < self.num_nodes):
                raise ValueError(f"edge ({h},{k}) out of range")
            if perm.size != self.d:
                raise ValueError(f"edge ({h},{k}) has permutation of size {perm.size}")
            key = (min(h, k), max(h, k))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)

    def components(self) -> list[list[int]]:
        return pair_graph_components(self.num_nodes, [(h, k) for h, k, _ in self.edges])

    def residual(self, perms: list[Permutation]) -> int:
        """Number of edges violated by ``perms``."""
        if not self.edges:
            return 0
        hs, ks, images = _edge_arrays(self)
        absolute = np.array([p.images for p in perms], dtype=np.int64).reshape(-1, self.d)
        # perms[h] * perms[k]^-1 == p  <=>  perms[h] == p * perms[k]
        ok = (absolute[hs] == np.take_along_axis(images, absolute[ks], axis=1)).all(axis=1)
        return int((~ok).sum())


@dataclass
class EigenResult:
    vectors: np.ndarray
    values: np.ndarray
    iterations: int
    dense_fallback: bool = False
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))


def build_block_matrix(problem: SyncProblem) -> np.ndarray:
    problem.check()
    return _block_matrix(problem)


def _block_matrix(problem: SyncProblem) -> np.ndarray:
    n, d = problem.num_nodes, problem.d
    a = np.eye(n * d)
    if problem.edges:
        hs, ks, images = _edge_arrays(problem)
        # Block (h, k) is perm.matrix(): a one at (perm(c), c).
        rows = hs[:, None] * d + images
        cols = ks[:, None] * d + np.arange(d)
        a[rows, cols] = 1.0
        a[cols, rows] = 1.0
    return a


def _edge_arrays(problem: SyncProblem):
    hs = np.array([h for h, _, _ in problem.edges], dtype=np.int64)
    ks = np.array([k for _, k, _ in problem.edges], dtype=np.int64)
    images = np.array([p.images for _, _, p in problem.edges], dtype=np.int64).reshape(-1, problem.d)
    return hs, ks, images


def _ritz_residuals(a, vecs, vals):
    return np.linalg.norm(a @ vecs - vecs * vals, axis=0)


def top_eigenvectors(
    matrix: np.ndarray,
    d: int,
    tol: float = DEFAULT_TOL,
    max_iter: int | None = None,
    allow_dense_fallback: bool = True,
    seed: int = 0,
) -> EigenResult:
    """Leading ``d`` eigenpairs of a symmetric matrix by subspace iteration.

    Each returned pair satisfies ``||A v - lam v|| <= tol * max|lam|``. The
    iteration runs on ``A + s I`` with ``s`` a bound on ``||A||`` so that
    the algebraically largest eigenvalues dominate. If the cap
    (default ``10 * dim``) is hit, a dense decomposition is used when
    ``allow_dense_fallback`` is set; otherwise :class:`EigenConvergenceError`.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(a, a.T):
        raise ValueError("matrix must be symmetric")
    dim = a.shape[0]
    if not 1 <= d <= dim:
        raise ValueError(f"cannot take {d} eigenvectors of a {dim}x{dim} matrix")
    if max_iter is None:
        max_iter = 10 * dim

    shift = float(np.abs(a).sum(axis=1).max())  # infinity norm bounds the spectral radius
    norm_a = max(shift, 1e-300)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, d)))
    vals = np.zeros(d)
    res = np.full(d, np.inf)
    # Scaling by 2s puts the spectrum of the step operator inside [0, 1].
    step = (a + shift * np.eye(dim)) / (2.0 * shift if shift > 0 else 1.0)
    products = _PRODUCTS_PER_STEP
    if dim <= _SQUARING_MAX_DIM:
        for _ in range(_SQUARINGS):
            step = step @ step
        products = 1
    for it in range(1, max_iter + 1):
        # Several powers of the operator per orthonormalization.
        z = q
        for _ in range(products):
            z = step @ z
        q, _ = np.linalg.qr(z)
        # Rayleigh-Ritz on the current subspace.
        h = q.T @ a @ q
        theta, s = np.linalg.eigh((h + h.T) / 2)
        order = np.argsort(theta)[::-1]
        theta, s = theta[order], s[:, order]
        q = q @ s
        vals = theta
        res = _ritz_residuals(a, q, vals)
        scale = max(float(np.abs(vals).max()), 1e-300)
        if np.all(res <= tol * scale):
            return EigenResult(q, vals, it, False, res)

    if not allow_dense_fallback:
        raise EigenConvergenceError(
            f"subspace iteration did not converge in {max_iter} iterations "
            f"(max residual {res.max():.3e})"
        )
    logger.info("subspace iteration hit cap of %d iterations; using dense eigh", max_iter)
    w, v = np.linalg.eigh(a)
    order = np.argsort(w)[::-1][:d]
    vals, vecs = w[order], v[:, order]
    res = _ritz_residuals(a, vecs, vals)
    if not np.all(res <= tol * norm_a):
        raise EigenConvergenceError(f"dense eigendecomposition residual {res.max():.3e} too large")
    return EigenResult(vecs, vals, max_iter, True, res)


def synchronize(problem: SyncProblem, tol: float = DEFAULT_TOL) -> list[Permutation]:
    """Absolute permutations for a connected problem, anchored at node 0."""
    problem.check()
    return _synchronize_checked(problem, tol)


def _synchronize_checked(problem: SyncProblem, tol: float) -> list[Permutation]:
    n, d = problem.num_nodes, problem.d
    if n == 1 or d == 1:
        return [Permutation.identity(d) for _ in range(n)]
    eig = top_eigenvectors(_block_matrix(problem), d, tol=tol)
    blocks = eig.vectors.reshape(n, d, d)
    # B_k B_0^T is invariant to the rotation ambiguity of the eigenbasis;
    # entry (pi(a), a) is large where node k's pi(a) meets the anchor's a.
    m = blocks @ blocks[0].T
    return solve_assignments(m.transpose(0, 2, 1))


def synchronize_components(problem: SyncProblem, tol: float = DEFAULT_TOL):
    """Synchronize each connected component separately.

    Returns ``(perms, components)``; each component is anchored at its
    smallest node. Components are ordered largest first (ties by smallest node).
    """
    problem.check(require_connected=False)
    comps = sorted(problem.components(), key=lambda c: (-len(c), c[0]))
    perms: list[Permutation | None] = [None] * problem.num_nodes
    if len(comps) == 1:
        return _synchronize_checked(problem, tol), comps
    for comp in comps:
        index = {node: pos for pos, node in enumerate(comp)}
        sub_edges = tuple(
            (index[h], index[k], p) for h, k, p in problem.edges if h in index and k in index
        )
        sub = SyncProblem(len(comp), problem.d, sub_edges)
        for node, perm in zip(comp, _synchronize_checked(sub, tol)):
            perms[node] = perm
    return perms, comps
