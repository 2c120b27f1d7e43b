"""Command-line interface.

Subcommands::

    pairseg synth     write a synthetic benchmark (matches, coordinates, ground truth)
    pairseg pairwise  segment every pair with sequential RANSAC
    pairseg segment   fuse pairwise segmentations into per-image labels
    pairseg eval      score per-image labels against ground truth

Exit codes: 0 success, 2 usage error, 3 input-format error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import formats
from .baseline import segment_baseline
from .fusion import segment_all
from .harness import (
    SceneConfig,
    best_label_mapping,
    corrupt_dataset,
    generate_scene,
    histogram_rows,
    label_tracks,
    misclassification_error_points,
    misclassification_error_tracks,
    pair_errors,
    simulate_pairwise,
    vote_composition,
    write_csv,
)
from .model import OUTLIER, validate_dataset
from .permsync import EigenConvergenceError
from .twoview import sequential_ransac_segment

logger = logging.getLogger("pairseg")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4
GT_DIR = "gt"


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# synth


def _eps_tag(eps: float) -> str:
    return f"eps_{eps:.2f}"


def write_benchmark(
    out: Path, config: SceneConfig, seed: int, eps: float, trial: int, simulate: tuple | None = None
) -> None:
    """One dataset directory: images.txt, pair_*.matches with coordinates, gt/ and tracks."""
    scene, dataset = generate_scene(config, np.random.SeedSequence([seed, trial]))
    corrupted = corrupt_dataset(dataset, eps, np.random.SeedSequence([seed, trial, round(eps * 1e6)]))
    formats.write_images(out / formats.IMAGES_FILE, dataset.num_points)
    for (i, j), m in sorted(corrupted.matches.items()):
        coords = np.column_stack([scene.image_points[i][m[:, 0]], scene.image_points[j][m[:, 1]]])
        formats.write_matches(formats.pair_file(out, (i, j), "matches"), (i, j), m, coords)
    formats.write_total_dir(out / GT_DIR, scene.labels, config.num_motions)
    formats.write_tracks(out / GT_DIR / formats.TRACKS_FILE, scene.tracks())
    if simulate is not None:
        flip, outlier, missing = simulate
        sim = simulate_pairwise(
            corrupted, scene.labels, flip, outlier, missing, np.random.SeedSequence([seed, trial, 7])
        )
        for pair in sim.segmented_pairs:
            formats.write_matches(formats.pair_file(out, pair, "matches"), pair, sim.matches[pair])
            formats.write_pseg(formats.pair_file(out, pair, "pseg"), pair, sim.partials[pair], config.num_motions)


def cmd_synth(args) -> int:
    config = SceneConfig(
        num_images=args.images,
        num_motions=args.motions,
        points_per_body=args.points_per_body,
        noise_sigma=args.sigma,
    )
    simulate = None
    if any(v is not None for v in (args.sim_flip, args.sim_outlier, args.sim_missing)):
        simulate = (args.sim_flip or 0.0, args.sim_outlier or 0.0, args.sim_missing or 0.0)
    out = Path(args.out)
    sweep = len(args.eps) > 1 or args.trials > 1
    for eps in args.eps:
        if not 0.0 <= eps <= 1.0:
            raise UsageError(f"--eps values must lie in [0, 1], got {eps}")
        for trial in range(args.trials):
            target = out / _eps_tag(eps) / f"trial_{trial:02d}" if sweep else out
            write_benchmark(target, config, args.seed, eps, trial, simulate)
            logger.info("wrote %s", target)
    return EXIT_OK


# --------------------------------------------------------------------------
# pairwise


def _segment_pair(job):
    pair, coords, d, threshold, confidence, max_iters, seed = job
    labels = sequential_ransac_segment(
        coords[:, :2], coords[:, 2:], d, threshold, confidence, max_iters, np.random.SeedSequence([seed, *pair])
    )
    return pair, labels


def cmd_pairwise(args) -> int:
    data = Path(args.data)
    out = Path(args.out) if args.out else data
    d = args.motions
    if d < 1:
        raise UsageError("--motions must be >= 1")
    jobs = []
    for pair, path in formats.list_pair_files(data, "matches").items():
        fpair, m, coords = formats.read_matches(path, require_coords=True)
        if fpair != pair:
            raise formats.FormatError(path, 1, "header pair disagrees with file name")
        if len(m) == 0:
            logger.warning("pair %s has no matches; omitted", pair)
            continue
        if out != data:
            formats.write_matches(formats.pair_file(out, pair, "matches"), pair, m, coords)
        jobs.append((pair, coords, d, args.threshold, args.confidence, args.max_iters, args.seed))
    if out != data:
        formats.write_images(out / formats.IMAGES_FILE, formats.read_images(data / formats.IMAGES_FILE))

    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_segment_pair, jobs))
    else:
        results = [_segment_pair(job) for job in jobs]
    for pair, labels in results:
        formats.write_pseg(formats.pair_file(out, pair, "pseg"), pair, labels, d)
    logger.info("segmented %d pairs", len(results))
    return EXIT_OK


# --------------------------------------------------------------------------
# segment


def _entry_truth_from_labels(dataset, gt):
    # Without physical point identities a match is taken as correct when both
    # ends carry the same ground-truth motion.
    truth = {}
    for pair, m in dataset.matches.items():
        a = gt[pair[0]][m[:, 0]]
        b = gt[pair[1]][m[:, 1]]
        truth[pair] = np.where(a == b, a, OUTLIER)
    return truth


def _report_lines(mode, result, report):
    rows = [("image", "classified_percent")]
    rows += [(str(i), f"{100.0 * np.mean(s != OUTLIER):.2f}" if len(s) else "100.00") for i, s in enumerate(result)]
    summary = [
        ("mode", mode),
        ("images", str(len(result))),
        ("classified_percent", f"{100.0 * np.mean(np.concatenate(result) != OUTLIER):.2f}"),
    ]
    if report is not None:
        summary += [
            ("sync_edges", str(report.sync_edges)),
            ("sync_residual", str(report.sync_residual)),
            ("flags", str(len(report.flags))),
        ]
    return summary, rows


def cmd_segment(args) -> int:
    data = Path(args.data)
    out = Path(args.out)
    dataset = formats.load_dataset(data, args.motions)
    check = validate_dataset(dataset)
    if not check.ok:
        raise formats.FormatError(data, None, "; ".join(check.violations))

    report = None
    if args.mode == "fusion":
        result, report = segment_all(dataset)
    else:
        result = segment_baseline(dataset)
    formats.write_total_dir(out, result, dataset.num_motions)

    summary, rows = _report_lines(args.mode, result, report)
    if args.report == "csv":
        write_csv(out / "report.csv", ["key", "value"], summary + [(f"image_{r[0]}", r[1]) for r in rows[1:]])
    else:
        text = "\n".join(f"{k}: {v}" for k, v in summary)
        text += "\n" + "\n".join(f"image {r[0]}: {r[1]}% classified" for r in rows[1:])
        if report is not None and report.flags:
            text += "\n" + "\n".join(f"flag: {f}" for f in report.flags)
        formats._atomic_write(out / "report.txt", text + "\n")
    for k, v in summary:
        print(f"{k}: {v}")

    if args.emit_histograms:
        if not args.gt:
            raise UsageError("--emit-histograms needs --gt")
        gt, _ = formats.read_total_dir(args.gt)
        truth = _entry_truth_from_labels(dataset, gt)
        errs = pair_errors(dataset, truth)
        write_csv(
            out / "pair_errors.csv",
            ["i", "j", "error_percent"],
            [(i, j, f"{e:.4f}") for (i, j), e in sorted(errs.items())],
        )
        write_csv(out / "pair_error_histogram.csv", ["low", "high", "pairs"], histogram_rows(errs.values()))
        image = args.vote_image
        mapping = best_label_mapping(result, gt, dataset.num_motions)
        fused = mapping(result[image])
        counts = vote_composition(dataset, image, gt[image], truth)
        rows = []
        for r, (c, w, o) in enumerate(counts):
            total = c + w + o
            status = "unknown" if fused[r] == OUTLIER else ("correct" if fused[r] == gt[image][r] else "wrong")
            frac = [v / total if total else 0.0 for v in (c, w, o)]
            rows.append((r, c, w, o, *(f"{f:.4f}" for f in frac), status))
        write_csv(
            out / f"votes_image_{image}.csv",
            ["point", "correct", "wrong", "outlier", "correct_frac", "wrong_frac", "outlier_frac", "fused"],
            rows,
        )
    return EXIT_OK


# --------------------------------------------------------------------------
# eval


def evaluate_dirs(pred_dir, gt_dir):
    pred, d_pred = formats.read_total_dir(pred_dir)
    gt, d_gt = formats.read_total_dir(gt_dir)
    if len(pred) != len(gt) or any(len(a) != len(b) for a, b in zip(pred, gt)):
        raise formats.FormatError(pred_dir, None, "prediction and ground truth differ in shape")
    d = max(d_pred, d_gt)
    mapping = best_label_mapping(pred, gt, d)
    total = misclassification_error_points(pred, gt, d, mapping)
    per_image = [misclassification_error_points(p, g, d, mapping) for p, g in zip(pred, gt)]
    return total, per_image, pred, d


def cmd_eval(args) -> int:
    total, per_image, pred, d = evaluate_dirs(args.pred, args.gt)
    fmt = lambda v: "nan" if math.isnan(v) else f"{v:.2f}"  # noqa: E731
    print(f"error_percent: {fmt(total.error)}")
    print(f"classified_percent: {fmt(total.classified)}")
    for i, s in enumerate(per_image):
        print(f"image {i}: error {fmt(s.error)}% classified {fmt(s.classified)}%")
    rows = [("all", fmt(total.error), fmt(total.classified), total.num_classified, total.num_points)]
    rows += [(i, fmt(s.error), fmt(s.classified), s.num_classified, s.num_points) for i, s in enumerate(per_image)]
    if args.tracks:
        tracks = formats.read_tracks(args.tracks)
        gt, _ = formats.read_total_dir(args.gt)
        err = misclassification_error_tracks(label_tracks(tracks, pred, d), label_tracks(tracks, gt, d), d)
        print(f"track_error_percent: {fmt(err)}")
        rows.append(("tracks", fmt(err), "", len(tracks), len(tracks)))
    csv_path = Path(args.csv) if args.csv else Path(args.pred) / "eval.csv"
    write_csv(csv_path, ["image", "error_percent", "classified_percent", "classified", "points"], rows)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pairseg", description="Motion segmentation from pairwise matches.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--images", type=int, default=20)
    p.add_argument("--motions", "-d", type=int, default=2)
    p.add_argument("--points-per-body", type=int, default=100)
    p.add_argument("--sigma", type=float, default=0.5, help="pixel noise")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--eps", type=float, nargs="+", default=[0.0], help="fractions of switched matches")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--sim-flip", type=float, help="also write simulated pairwise labels with this flip rate")
    p.add_argument("--sim-outlier", type=float)
    p.add_argument("--sim-missing", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pairwise", help="segment every image pair")
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--motions", "-d", type=int, required=True)
    p.add_argument("--threshold", type=float, default=2.0, help="inlier distance (Sampson, pixels)")
    p.add_argument("--confidence", type=float, default=0.999)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_pairwise)

    p = sub.add_parser("segment", help="fuse pairwise segmentations")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--motions", "-d", type=int, required=True)
    p.add_argument("--mode", choices=["fusion", "baseline"], default="fusion")
    p.add_argument("--report", choices=["text", "csv"], default="text")
    p.add_argument("--emit-histograms", action="store_true")
    p.add_argument("--gt", help="ground-truth directory for --emit-histograms")
    p.add_argument("--vote-image", type=int, default=0)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="score segmentations")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--csv")
    p.add_argument("--tracks", help="tracks.txt for the track-level error")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"pairseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except formats.FormatError as exc:
        print(f"pairseg: input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        print(f"pairseg: input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except EigenConvergenceError as exc:
        print(f"pairseg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
