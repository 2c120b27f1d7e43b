import numpy as np
import pytest

from pairseg.assignment import Permutation
from pairseg.permsync import (
    EigenConvergenceError,
    SyncProblem,
    build_block_matrix,
    synchronize,
    synchronize_components,
    top_eigenvectors,
)

from conftest import random_permutation

SWAP = Permutation((1, 0))


def planted_problem(rng, n, d, corrupt=0.0, density=1.0):
    truth = [Permutation.identity(d)] + [random_permutation(rng, d) for _ in range(n - 1)]
    edges, wrong = [], 0
    for h in range(n):
        for k in range(h + 1, n):
            if rng.random() > density:
                continue
            p = truth[h] * truth[k].inverse()
            if rng.random() < corrupt:
                q = random_permutation(rng, d)
                wrong += q != p
                p = q
            edges.append((h, k, p))
    return truth, SyncProblem(n, d, tuple(edges)), wrong


# --- block matrix ---------------------------------------------------------


def test_block_matrix_identity_edge():
    a = build_block_matrix(SyncProblem(2, 2, ((0, 1, Permutation.identity(2)),)))
    i = np.eye(2)
    np.testing.assert_array_equal(a, np.block([[i, i], [i, i]]))


def test_block_matrix_swap_edge():
    a = build_block_matrix(SyncProblem(2, 2, ((0, 1, SWAP),)))
    np.testing.assert_array_equal(a[0:2, 2:4], [[0, 1], [1, 0]])
    np.testing.assert_array_equal(a[2:4, 0:2], a[0:2, 2:4].T)


def test_block_matrix_missing_edge_is_zero():
    e = Permutation.identity(2)
    a = build_block_matrix(SyncProblem(3, 2, ((0, 1, e), (1, 2, e))))
    assert not a[0:2, 4:6].any() and not a[4:6, 0:2].any()
    np.testing.assert_array_equal(a, a.T)


@pytest.mark.parametrize(
    "edges",
    [
        ((0, 0, SWAP),),
        ((0, 1, SWAP), (1, 0, SWAP)),
        ((0, 1, Permutation.identity(3)),),
    ],
)
def test_problem_check_rejects_bad_edges(edges):
    with pytest.raises(ValueError):
        SyncProblem(2, 2, edges).check()


def test_problem_check_rejects_disconnected():
    with pytest.raises(ValueError):
        SyncProblem(3, 2, ((0, 1, SWAP),)).check()


# --- eigen-solver ---------------------------------------------------------


def test_consistent_block_matrix_spectrum_against_dense_oracle(rng):
    for n in range(2, 13):
        for d in range(1, 6):
            if n * d > 60:
                continue
            _, problem, _ = planted_problem(rng, n, d)
            a = build_block_matrix(problem)
            dense = np.linalg.eigvalsh(a)[::-1]
            np.testing.assert_allclose(dense[:d], n, atol=1e-9)
            assert np.all(dense[d:] < n - 0.5)
            eig = top_eigenvectors(a, d)
            np.testing.assert_allclose(eig.values, n, atol=1e-8)


def test_identity_problem_has_constant_eigenvectors():
    a = build_block_matrix(SyncProblem(2, 2, ((0, 1, Permutation.identity(2)),)))
    eig = top_eigenvectors(a, 2)
    np.testing.assert_allclose(eig.values, [2, 2], atol=1e-10)
    blocks = eig.vectors.reshape(2, 2, 2)
    np.testing.assert_allclose(blocks[0], blocks[1], atol=1e-9)


def test_top_eigenvectors_residual_contract_on_noisy_problem(rng):
    _, problem, _ = planted_problem(rng, 10, 3, corrupt=0.2)
    a = build_block_matrix(problem)
    eig = top_eigenvectors(a, 3)
    res = np.linalg.norm(a @ eig.vectors - eig.vectors * eig.values, axis=0)
    assert np.all(res <= 1e-9 * np.abs(eig.values).max())
    np.testing.assert_allclose(eig.values, np.linalg.eigvalsh(a)[::-1][:3], atol=1e-8)
    np.testing.assert_allclose(eig.vectors.T @ eig.vectors, np.eye(3), atol=1e-10)


def test_top_eigenvectors_general_symmetric_matrix(rng):
    for _ in range(20):
        m = rng.normal(size=(15, 15))
        a = m + m.T
        eig = top_eigenvectors(a, 3)
        np.testing.assert_allclose(eig.values, np.linalg.eigvalsh(a)[::-1][:3], atol=1e-7)


def test_eigen_non_convergence_raises_without_fallback(rng):
    m = rng.normal(size=(20, 20))
    with pytest.raises(EigenConvergenceError):
        top_eigenvectors(m + m.T, 3, max_iter=1, allow_dense_fallback=False)


def test_eigen_dense_fallback(rng):
    m = rng.normal(size=(20, 20))
    eig = top_eigenvectors(m + m.T, 3, max_iter=1)
    assert eig.dense_fallback


# --- synchronize ----------------------------------------------------------


def test_all_identity_edges():
    e = Permutation.identity(3)
    perms = synchronize(SyncProblem(4, 3, tuple((h, k, e) for h in range(4) for k in range(h + 1, 4))))
    assert all(p.is_identity() for p in perms)


def test_small_consistent_problem_recovers_planted():
    e = Permutation.identity(2)
    problem = SyncProblem(3, 2, ((0, 1, SWAP), (1, 2, SWAP), (0, 2, e)))
    perms = synchronize(problem)
    assert perms == [e, SWAP, e]
    assert problem.residual(perms) == 0


def test_exact_recovery_with_corrupted_edges():
    rng = np.random.default_rng(7)
    recovered = 0
    for _ in range(50):
        truth, problem, _ = planted_problem(rng, 10, 3, corrupt=0.2)
        recovered += synchronize(problem) == truth
    assert recovered == 50


def test_recovery_on_sparse_consistent_graph(rng):
    for _ in range(20):
        truth, problem, _ = planted_problem(rng, 12, 4, density=0.4)
        if len(problem.components()) > 1:
            continue
        assert synchronize(problem) == truth


def test_components_are_synchronized_separately(rng):
    truth = [random_permutation(rng, 3) for _ in range(5)]
    rel = lambda h, k: truth[h] * truth[k].inverse()  # noqa: E731
    problem = SyncProblem(5, 3, ((0, 1, rel(0, 1)), (2, 3, rel(2, 3)), (3, 4, rel(3, 4))))
    perms, comps = synchronize_components(problem)
    assert comps == [[2, 3, 4], [0, 1]]
    assert problem.residual(perms) == 0
    assert perms[0].is_identity() and perms[2].is_identity()


def test_single_node_problem():
    assert synchronize(SyncProblem(1, 3, ())) == [Permutation.identity(3)]
