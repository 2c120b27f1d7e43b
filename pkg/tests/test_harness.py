import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairseg.assignment import Permutation
from pairseg.fusion import segment_all
from pairseg.harness import (
    SceneConfig,
    best_label_mapping,
    corrupt_dataset,
    corrupt_matches,
    generate_scene,
    histogram_rows,
    label_tracks,
    match_coordinates,
    misclassification_error_points,
    misclassification_error_tracks,
    pair_errors,
    simulate_pairwise,
    validate_tracks,
    vote_composition,
)
from pairseg.model import validate_dataset
from pairseg.twoview import fit_fundamental, sampson_error

SMALL = SceneConfig(num_images=5, points_per_body=30)


# --- scene generation -----------------------------------------------------


def test_scene_shapes_and_truth():
    scene, ds = generate_scene(SMALL, seed=1)
    assert ds.num_points == (60,) * 5
    assert validate_dataset(ds.with_partials({p: np.ones(len(m), np.uint16) for p, m in ds.matches.items()})).ok
    for (i, j), m in ds.matches.items():
        # Exact correspondences: same physical point, same label.
        np.testing.assert_array_equal(scene.point_ids[i][m[:, 0]], scene.point_ids[j][m[:, 1]])
        np.testing.assert_array_equal(scene.labels[i][m[:, 0]], scene.labels[j][m[:, 1]])
        assert np.all(scene.entry_truth((i, j), m) > 0)


def test_single_noise_free_motion_fits_one_fundamental_matrix():
    scene, ds = generate_scene(SceneConfig(num_images=4, num_motions=1, points_per_body=40, noise_sigma=0.0), seed=2)
    for pair, m in ds.matches.items():
        x1, x2 = match_coordinates(scene, pair, m)
        f = fit_fundamental(x1, x2)
        assert np.all(sampson_error(f, x1, x2) < 1e-9)


def test_identical_motions_rejected():
    cfg = SceneConfig(num_images=3, points_per_body=10, static_background=False,
                      body_speeds=(0.0, 0.0), body_rotations_deg=(0.0, 0.0))
    with pytest.raises(ValueError):
        generate_scene(cfg, seed=0)


def test_scene_is_deterministic():
    a_scene, a = generate_scene(SMALL, seed=9)
    b_scene, b = generate_scene(SMALL, seed=9)
    for i in range(5):
        np.testing.assert_array_equal(a_scene.image_points[i], b_scene.image_points[i])
    for p in a.matches:
        np.testing.assert_array_equal(a.matches[p], b.matches[p])


def test_tracks_cover_every_point_once():
    scene, ds = generate_scene(SMALL, seed=3)
    tracks = scene.tracks()
    assert validate_tracks(tracks, ds.num_points) == []
    assert sum(len(t) for t in tracks) == sum(ds.num_points)
    truth = label_tracks(tracks, scene.labels, 2)
    np.testing.assert_array_equal(truth, scene.track_labels())


def test_validate_tracks_reports_problems():
    assert validate_tracks([[(0, 0), (0, 1)]], (2,))
    assert validate_tracks([[(0, 5)]], (2,))
    assert validate_tracks([[(0, 0)], [(0, 0)]], (2,))


# --- corruption -----------------------------------------------------------


def test_corrupt_zero_is_identity():
    m = np.column_stack([np.arange(10), np.arange(10)[::-1]])
    np.testing.assert_array_equal(corrupt_matches(m, 0.0, 1), m)


def test_corrupt_two_entries_swaps_them():
    m = np.array([[0, 5], [1, 7]])
    assert corrupt_matches(m, 1.0, 3).tolist() == [[0, 7], [1, 5]]


def test_corrupt_exact_count_and_one_to_one():
    m = np.column_stack([np.arange(1000), np.random.default_rng(0).permutation(1000)])
    out = corrupt_matches(m, 0.4, 11)
    assert int(np.sum(out[:, 1] != m[:, 1])) == 400
    np.testing.assert_array_equal(out[:, 0], m[:, 0])
    assert sorted(out[:, 1]) == sorted(m[:, 1])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 60), st.floats(0, 1), st.integers(0, 2**32 - 1))
def test_corrupt_properties(m, eps, seed):
    rng = np.random.default_rng(seed)
    matches = np.column_stack([rng.permutation(m), rng.permutation(m)])
    out = corrupt_matches(matches, eps, seed)
    k = int(np.floor(eps * m + 1e-9))
    changed = int(np.sum(out[:, 1] != matches[:, 1]))
    assert changed == (k if k >= 2 else 0)
    assert len(set(out[:, 1].tolist())) == m
    np.testing.assert_array_equal(out, corrupt_matches(matches, eps, seed))


def test_corrupt_rejects_bad_fraction():
    with pytest.raises(ValueError):
        corrupt_matches(np.zeros((3, 2)), 1.5)


def test_corrupt_dataset_per_pair():
    _, ds = generate_scene(SMALL, seed=4)
    out = corrupt_dataset(ds, 0.5, 1)
    for p, m in ds.matches.items():
        assert int(np.sum(out.matches[p][:, 1] != m[:, 1])) == 30


# --- simulated pairwise ---------------------------------------------------


def test_simulated_clean_data_is_recovered():
    scene, ds = generate_scene(SMALL, seed=5)
    sim = simulate_pairwise(ds, scene.labels, seed=1)
    result, report = segment_all(sim)
    assert misclassification_error_points(result, scene.labels, 2).error == 0.0
    assert report.sync_residual == 0


def test_simulated_rates():
    scene, ds = generate_scene(SceneConfig(num_images=10), seed=6)
    sim = simulate_pairwise(ds, scene.labels, flip_rate=0.2, outlier_rate=0.1, missing_rate=0.3, seed=2)
    kept = sum(len(m) for m in sim.matches.values()) / sum(len(m) for m in ds.matches.values())
    assert kept == pytest.approx(0.7, abs=0.01)
    labels = np.concatenate(list(sim.partials.values()))
    assert np.mean(labels == 0) == pytest.approx(0.1, abs=0.01)
    truth = {p: scene.entry_truth(p, m) for p, m in sim.matches.items()}
    errs = np.array(list(pair_errors(sim, truth).values()))
    # Flips are applied before outliers, so 20% of the surviving labels are wrong.
    assert errs.mean() == pytest.approx(20.0, abs=1.5)


def test_simulated_all_outliers_gives_unknown():
    scene, ds = generate_scene(SMALL, seed=7)
    result, _ = segment_all(simulate_pairwise(ds, scene.labels, outlier_rate=1.0, seed=3))
    assert all(np.all(s == 0) for s in result)


def test_simulate_rejects_bad_rate():
    scene, ds = generate_scene(SMALL, seed=7)
    with pytest.raises(ValueError):
        simulate_pairwise(ds, scene.labels, flip_rate=-0.1)


def test_perfect_segmenter_survives_corruption():
    # With an oracle segmenter, switched matches only remove evidence.
    scene, ds = generate_scene(SceneConfig(points_per_body=40), seed=8)
    for eps in (0.2, 0.4):
        bad = corrupt_dataset(ds, eps, 4)
        partials = {p: scene.entry_truth(p, m) for p, m in bad.matches.items()}
        result, _ = segment_all(bad.with_partials(partials))
        assert misclassification_error_points(result, scene.labels, 2).error == 0.0


# --- metrics --------------------------------------------------------------


def test_point_metric_examples():
    gt = np.array([1] * 50 + [2] * 50)
    score = misclassification_error_points(gt, gt, 2)
    assert (score.error, score.classified) == (0.0, 100.0)
    assert misclassification_error_points(3 - gt, gt, 2).error == 0.0
    pred = gt.copy()
    pred[60:] = 0
    pred[:3] = 2
    score = misclassification_error_points(pred, gt, 2)
    assert (score.error, score.classified) == (5.0, 60.0)


def test_point_metric_nothing_classified():
    score = misclassification_error_points(np.zeros(4), np.ones(4), 2)
    assert np.isnan(score.error) and score.classified == 0.0


def test_track_metric_examples():
    gt = np.array([1] * 50 + [2] * 50)
    assert misclassification_error_tracks(gt, gt, 2) == 0.0
    assert misclassification_error_tracks(3 - gt, gt, 2) == 0.0
    pred = gt.copy()
    pred[7] = 0
    assert misclassification_error_tracks(pred, gt, 2) == 1.0


@pytest.mark.parametrize("labels, expected", [((1, 1, 2), 1), ((0, 0, 2), 2), ((0, 0), 0), ((2, 1), 1)])
def test_label_tracks_mode(labels, expected):
    segs = [np.array([v]) for v in labels]
    track = [(i, 0) for i in range(len(labels))]
    assert label_tracks([track], segs, 2).tolist() == [expected]


def test_best_label_mapping_examples():
    gt = np.array([1, 2, 2, 1])
    assert best_label_mapping(gt, gt, 2).is_identity()
    assert best_label_mapping(3 - gt, gt, 2) == Permutation((1, 0))


def test_best_label_mapping_matches_enumeration():
    rng = np.random.default_rng(21)
    for _ in range(300):
        d = int(rng.integers(1, 5))
        pred = rng.integers(0, d + 1, size=25)
        gt = rng.integers(1, d + 1, size=25)
        got = misclassification_error_points(pred, gt, d).wrong
        best = min(
            int(np.sum((pred > 0) & (Permutation(p)(pred) != gt))) for p in itertools.permutations(range(d))
        )
        assert got == best


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_metrics_invariant_to_global_relabeling(d, seed):
    rng = np.random.default_rng(seed)
    pred = rng.integers(0, d + 1, size=40)
    gt = rng.integers(1, d + 1, size=40)
    perm = Permutation(tuple(int(v) for v in rng.permutation(d)))
    assert misclassification_error_points(pred, gt, d).wrong == misclassification_error_points(perm(pred), gt, d).wrong
    tp = np.where(pred == 0, 1, pred)
    assert misclassification_error_tracks(tp, gt, d) == misclassification_error_tracks(perm(tp), gt, d)


def test_vote_composition_and_histogram():
    scene, ds = generate_scene(SMALL, seed=10)
    sim = simulate_pairwise(ds, scene.labels, flip_rate=0.25, outlier_rate=0.25, seed=4)
    truth = {p: scene.entry_truth(p, m) for p, m in sim.matches.items()}
    counts = vote_composition(sim, 0, scene.labels[0], truth)
    assert counts.shape == (60, 3)
    assert np.all(counts.sum(axis=1) == 4)
    rows = histogram_rows(pair_errors(sim, truth).values(), 10.0)
    assert len(rows) == 10 and sum(r[2] for r in rows) == len(sim.matches)
