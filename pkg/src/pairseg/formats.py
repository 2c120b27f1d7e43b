"""Line-oriented text formats.

All files are UTF-8 with LF line endings; ``#`` starts a comment and blank
lines are ignored.

``images.txt``
    ``n <n>`` then one ``<i> <p_i>`` line per image.
``pair_<i>_<j>.matches``
    ``m <i> <j> <count>`` then ``idx_i idx_j [x y x' y']`` per entry.
``pair_<i>_<j>.pseg``
    ``s <i> <j> <count> <d>`` then one label per line, in match-file order.
``image_<i>.tseg``
    ``t <i> <p_i> <d>`` then one label per point (0 = unknown).
``tracks.txt``
    one track per line as ``image:point`` tokens.
"""

from __future__ import annotations

import os
import re
import tempfile
from pathlib import Path

import numpy as np

from .model import LABEL_DTYPE, Dataset

IMAGES_FILE = "images.txt"
TRACKS_FILE = "tracks.txt"
_PAIR_RE = re.compile(r"^pair_(\d+)_(\d+)\.(matches|pseg)$")
_IMAGE_RE = re.compile(r"^image_(\d+)\.tseg$")


class FormatError(ValueError):
    def __init__(self, path, line: int | None, rule: str):
        self.path = Path(path)
        self.line = line
        self.rule = rule
        where = f"{self.path}:{line}" if line is not None else str(self.path)
        super().__init__(f"{where}: {rule}")


def _lines(path: Path):
    """Yield ``(line number, tokens)`` for non-empty, non-comment lines."""
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(path, None, f"not valid UTF-8 ({exc.reason})") from None
    for num, raw in enumerate(text.split("\n"), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            yield num, body.split()


def _int(path, line, token, what) -> int:
    try:
        return int(token)
    except ValueError:
        raise FormatError(path, line, f"{what} must be an integer, got {token!r}") from None


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header(path: Path, lines, tag: str, count: int):
    try:
        num, tokens = next(lines)
    except StopIteration:
        raise FormatError(path, None, f"missing '{tag}' header") from None
    if tokens[0] != tag or len(tokens) != count + 1:
        raise FormatError(path, num, f"header must read '{tag}' followed by {count} integers")
    return num, [_int(path, num, t, "header field") for t in tokens[1:]]


# --------------------------------------------------------------------------
# images.txt


def write_images(path, num_points) -> None:
    body = [f"n {len(num_points)}"] + [f"{i} {p}" for i, p in enumerate(num_points)]
    _atomic_write(Path(path), "\n".join(body) + "\n")


def read_images(path) -> tuple[int, ...]:
    path = Path(path)
    lines = _lines(path)
    hnum, (n,) = _header(path, lines, "n", 1)
    counts: dict[int, int] = {}
    for num, tokens in lines:
        if len(tokens) != 2:
            raise FormatError(path, num, "expected '<image> <point count>'")
        i, p = (_int(path, num, t, "field") for t in tokens)
        if not 0 <= i < n:
            raise FormatError(path, num, f"image index {i} outside [0, {n})")
        if p < 0:
            raise FormatError(path, num, "point count must be non-negative")
        if i in counts:
            raise FormatError(path, num, f"image {i} listed twice")
        counts[i] = p
    if len(counts) != n:
        raise FormatError(path, hnum, f"header announces {n} images, found {len(counts)}")
    return tuple(counts[i] for i in range(n))


# --------------------------------------------------------------------------
# matches


def write_matches(path, pair, matches, coords: np.ndarray | None = None) -> None:
    matches = np.asarray(matches, dtype=np.int64).reshape(-1, 2)
    i, j = pair
    body = [f"m {i} {j} {len(matches)}"]
    for r, (a, b) in enumerate(matches):
        if coords is None:
            body.append(f"{a} {b}")
        else:
            body.append(f"{a} {b} " + " ".join(repr(float(v)) for v in coords[r]))
    _atomic_write(Path(path), "\n".join(body) + "\n")


def read_matches(path, require_coords: bool = False):
    """Returns ``(pair, matches (m, 2), coords (m, 4) or None)``."""
    path = Path(path)
    lines = _lines(path)
    hnum, (i, j, count) = _header(path, lines, "m", 3)
    if not 0 <= i < j:
        raise FormatError(path, hnum, "pair must satisfy 0 <= i < j")
    idx, coords = [], []
    with_coords = None
    for num, tokens in lines:
        if len(tokens) not in (2, 6):
            raise FormatError(path, num, "expected 'idx_i idx_j' or 'idx_i idx_j x y x2 y2'")
        has = len(tokens) == 6
        if with_coords is None:
            with_coords = has
        elif has != with_coords:
            raise FormatError(path, num, "coordinates must be given on all lines or none")
        idx.append((_int(path, num, tokens[0], "point index"), _int(path, num, tokens[1], "point index")))
        if has:
            try:
                vals = [float(t) for t in tokens[2:]]
            except ValueError:
                raise FormatError(path, num, "coordinates must be numbers") from None
            if not all(np.isfinite(vals)):
                raise FormatError(path, num, "coordinates must be finite")
            coords.append(vals)
    if len(idx) != count:
        raise FormatError(path, hnum, f"header announces {count} matches, found {len(idx)}")
    if require_coords and count and not with_coords:
        raise FormatError(path, hnum, "coordinates are required")
    m = np.array(idx, dtype=np.int64).reshape(-1, 2)
    c = np.array(coords, dtype=float).reshape(-1, 4) if with_coords else None
    return (i, j), m, c


# --------------------------------------------------------------------------
# partial / total segmentations


def _labels_body(path, lines, count, d):
    out = []
    for num, tokens in lines:
        if len(tokens) != 1:
            raise FormatError(path, num, "expected one label per line")
        v = _int(path, num, tokens[0], "label")
        if not 0 <= v <= d:
            raise FormatError(path, num, f"label {v} outside [0, {d}]")
        out.append(v)
    if len(out) != count:
        raise FormatError(path, None, f"header announces {count} labels, found {len(out)}")
    return np.array(out, dtype=LABEL_DTYPE)


def write_pseg(path, pair, labels, d: int) -> None:
    i, j = pair
    body = [f"s {i} {j} {len(labels)} {d}"] + [str(int(v)) for v in labels]
    _atomic_write(Path(path), "\n".join(body) + "\n")


def read_pseg(path):
    """Returns ``(pair, labels, d)``."""
    path = Path(path)
    lines = _lines(path)
    hnum, (i, j, count, d) = _header(path, lines, "s", 4)
    if not 0 <= i < j:
        raise FormatError(path, hnum, "pair must satisfy 0 <= i < j")
    return (i, j), _labels_body(path, lines, count, d), d


def write_tseg(path, image: int, labels, d: int) -> None:
    body = [f"t {image} {len(labels)} {d}"] + [str(int(v)) for v in labels]
    _atomic_write(Path(path), "\n".join(body) + "\n")


def read_tseg(path):
    """Returns ``(image, labels, d)``."""
    path = Path(path)
    lines = _lines(path)
    _, (i, count, d) = _header(path, lines, "t", 3)
    return i, _labels_body(path, lines, count, d), d


def write_tracks(path, tracks) -> None:
    body = [" ".join(f"{i}:{r}" for i, r in t) for t in tracks]
    _atomic_write(Path(path), "\n".join(body) + "\n")


def read_tracks(path) -> list[list[tuple[int, int]]]:
    path = Path(path)
    tracks = []
    for num, tokens in _lines(path):
        track = []
        for tok in tokens:
            parts = tok.split(":")
            if len(parts) != 2:
                raise FormatError(path, num, f"track slot must read 'image:point', got {tok!r}")
            track.append((_int(path, num, parts[0], "image"), _int(path, num, parts[1], "point")))
        tracks.append(track)
    return tracks


# --------------------------------------------------------------------------
# directories


def pair_file(directory, pair, kind: str) -> Path:
    return Path(directory) / f"pair_{pair[0]}_{pair[1]}.{kind}"


def image_file(directory, image: int) -> Path:
    return Path(directory) / f"image_{image}.tseg"


def list_pair_files(directory, kind: str) -> dict[tuple[int, int], Path]:
    found = {}
    for p in sorted(Path(directory).iterdir()):
        mt = _PAIR_RE.match(p.name)
        if mt and mt.group(3) == kind:
            found[(int(mt.group(1)), int(mt.group(2)))] = p
    return found


def read_total_dir(directory) -> tuple[list[np.ndarray], int]:
    """All ``image_<i>.tseg`` files of a directory, ordered by image."""
    directory = Path(directory)
    found = {}
    d_seen = None
    for p in sorted(directory.iterdir()):
        mt = _IMAGE_RE.match(p.name)
        if not mt:
            continue
        i, labels, d = read_tseg(p)
        if i != int(mt.group(1)):
            raise FormatError(p, 1, f"header image {i} disagrees with file name")
        if d_seen is not None and d != d_seen:
            raise FormatError(p, 1, f"motion count {d} differs from other files ({d_seen})")
        d_seen = d
        found[i] = labels
    if not found:
        raise FormatError(directory, None, "no image_<i>.tseg files found")
    if sorted(found) != list(range(len(found))):
        raise FormatError(directory, None, "image_<i>.tseg files must cover images 0..n-1")
    return [found[i] for i in range(len(found))], int(d_seen)


def write_total_dir(directory, segmentations, d: int) -> None:
    for i, labels in enumerate(segmentations):
        write_tseg(image_file(directory, i), i, labels, d)


def load_dataset(directory, d: int) -> Dataset:
    """Read ``images.txt`` plus every pair that has both a matches and a pseg file."""
    directory = Path(directory)
    num_points = read_images(directory / IMAGES_FILE)
    matches, partials = {}, {}
    pseg_files = list_pair_files(directory, "pseg")
    for pair, path in pseg_files.items():
        mpath = pair_file(directory, pair, "matches")
        if not mpath.exists():
            raise FormatError(path, None, f"no matching {mpath.name}")
        mpair, m, _ = read_matches(mpath)
        spair, labels, sd = read_pseg(path)
        if mpair != pair:
            raise FormatError(mpath, 1, "header pair disagrees with file name")
        if spair != pair:
            raise FormatError(path, 1, "header pair disagrees with file name")
        if sd != d:
            raise FormatError(path, 1, f"file declares {sd} motions, run uses {d}")
        if len(labels) != len(m):
            raise FormatError(path, 1, f"{len(labels)} labels for {len(m)} matches")
        for side, img in ((0, pair[0]), (1, pair[1])):
            if img >= len(num_points):
                raise FormatError(mpath, 1, f"image {img} not listed in {IMAGES_FILE}")
            bad = np.flatnonzero((m[:, side] < 0) | (m[:, side] >= num_points[img]))
            if len(bad):
                raise FormatError(mpath, None, f"entry {bad[0]}: point index outside image {img}")
        matches[pair] = m
        partials[pair] = labels
    return Dataset(d, num_points, matches, partials)
