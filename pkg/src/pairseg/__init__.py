"""Multi-image motion segmentation by fusing pairwise segmentations."""

from .assignment import Permutation, agreement_matrix, align_labels, solve_assignment
from .baseline import max_spanning_tree, propagate_baseline, segment_baseline
from .fusion import IGNORE_ZEROS, KEEP_ZEROS, RunReport, fuse_mode, segment_all, segment_image
from .model import MISSING, OUTLIER, Dataset, restrict_partial, validate_dataset
from .permsync import EigenConvergenceError, SyncProblem, synchronize, synchronize_components

__all__ = [
    "Dataset",
    "EigenConvergenceError",
    "IGNORE_ZEROS",
    "KEEP_ZEROS",
    "MISSING",
    "OUTLIER",
    "Permutation",
    "RunReport",
    "SyncProblem",
    "agreement_matrix",
    "align_labels",
    "fuse_mode",
    "max_spanning_tree",
    "propagate_baseline",
    "restrict_partial",
    "segment_all",
    "segment_baseline",
    "segment_image",
    "solve_assignment",
    "synchronize",
    "synchronize_components",
    "validate_dataset",
]
