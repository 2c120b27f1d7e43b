import numpy as np
import pytest

from pairseg.model import (
    MISSING,
    OUTLIER,
    Dataset,
    as_labels,
    estimate_for,
    pair_graph_components,
    restrict_partial,
    validate_dataset,
)


def two_image_dataset():
    return Dataset(2, (3, 2), {(0, 1): np.array([[0, 1], [2, 0]])}, {(0, 1): as_labels([1, 2])})


def test_well_formed_dataset_is_ok():
    assert validate_dataset(two_image_dataset()).ok


def test_length_mismatch_reported():
    m = np.array([[r, r] for r in range(5)])
    ds = Dataset(2, (5, 5), {(0, 1): m}, {(0, 1): as_labels([1, 1, 2, 2])})
    assert "length mismatch (0,1)" in validate_dataset(ds).violations


def test_isolated_image_reported():
    ds = Dataset(2, (2, 2, 2), {(0, 1): np.array([[0, 0]])}, {(0, 1): as_labels([1])})
    assert "pair graph disconnected" in validate_dataset(ds).violations


def test_duplicate_point_in_matches_reported():
    ds = Dataset(2, (3, 3), {(0, 1): np.array([[0, 0], [0, 1]])}, {(0, 1): as_labels([1, 2])})
    assert not validate_dataset(ds).ok


def test_label_out_of_range_reported():
    ds = Dataset(2, (2, 2), {(0, 1): np.array([[0, 0]])}, {(0, 1): as_labels([3])})
    assert not validate_dataset(ds).ok


def test_restrict_partial_scatters_both_sides():
    est_i, est_j = restrict_partial(two_image_dataset(), (0, 1))
    assert est_i.tolist() == [1, MISSING, 2]
    assert est_j.tolist() == [2, 1]


def test_restrict_partial_keeps_outliers():
    ds = two_image_dataset().with_partials({(0, 1): as_labels([0, 1])})
    est_i, _ = restrict_partial(ds, (0, 1))
    assert est_i.tolist() == [OUTLIER, MISSING, 1]


def test_restrict_partial_unknown_pair():
    with pytest.raises(KeyError):
        restrict_partial(two_image_dataset(), (0, 2))


def test_estimate_for_is_symmetric_accessor():
    ds = two_image_dataset()
    assert estimate_for(ds, 1, 0).tolist() == [2, 1]
    assert estimate_for(ds, 0, 1).tolist() == [1, MISSING, 2]


def test_dataset_arrays_are_read_only():
    ds = two_image_dataset()
    with pytest.raises(ValueError):
        ds.partials[(0, 1)][0] = 2


def test_partners_and_components():
    m = np.array([[0, 0]])
    lab = as_labels([1])
    ds = Dataset(1, (1, 1, 1, 1), {(0, 1): m, (2, 3): m}, {(0, 1): lab, (2, 3): lab})
    assert ds.partners(0) == [1]
    comps = pair_graph_components(4, ds.segmented_pairs)
    assert sorted(map(sorted, comps)) == [[0, 1], [2, 3]]


def test_full_pair_set_partners():
    m = np.array([[0, 0]])
    pairs = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    ds = Dataset(1, (1,) * 4, {p: m for p in pairs}, {p: as_labels([1]) for p in pairs})
    assert len(ds.partners(0)) == 3
