"""Frame alignment: pairwise distances, DTW, and word-segmented warping."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import BoundaryMismatch, CorruptFile, HopMismatch, InvalidInput, IoError
from .features import FeatureSequence, WordBoundaries

# Allowed DP moves: advance source, advance target, advance both.
DTW_STEPS = ((1, 0), (0, 1), (1, 1))


@dataclass
class AlignmentPath:
    """Monotone sequence of (source_frame, target_frame) pairs with total cost."""

    pairs: np.ndarray
    cost: float

    def __post_init__(self) -> None:
        arr = np.asarray(self.pairs, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 1:
            raise InvalidInput(f"path must be (L, 2) with L >= 1, got {arr.shape}")
        steps = np.diff(arr, axis=0)
        # Word-segmented paths may skip pause frames, so only monotonicity and
        # uniqueness are global invariants; the unit step set is checked by
        # validate_full for single-lattice paths.
        if steps.size and (steps.min() < 0 or (steps == 0).all(axis=1).any()):
            raise InvalidInput("path must be strictly monotone without repeats")
        self.pairs = arr

    def __len__(self) -> int:
        return self.pairs.shape[0]

    def validate_full(self, m: int, n: int) -> None:
        """Check a corner-to-corner lattice path with unit steps only."""
        first, last = self.pairs[0], self.pairs[-1]
        if tuple(first) != (0, 0) or tuple(last) != (m - 1, n - 1):
            raise InvalidInput(
                f"path runs {tuple(first)}..{tuple(last)}, expected (0, 0)..({m - 1}, {n - 1})"
            )
        steps = np.diff(self.pairs, axis=0)
        if steps.size and steps.max() > 1:
            raise InvalidInput("full path steps must be (1,0), (0,1) or (1,1)")


def frame_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mean squared error between every frame pair, shape (len(a), len(b)).

    Computed directly (no norm expansion) in float64 so that identical frames
    give exactly zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise InvalidInput("frame_distance expects 2-D frame matrices")
    if a.shape[1] != b.shape[1]:
        raise InvalidInput(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    m = a.shape[0]
    out = np.empty((m, b.shape[0]))
    block = max(1, int(2_000_000 // max(b.size, 1)))
    for i in range(0, m, block):
        diff = a[i : i + block, None, :] - b[None, :, :]
        out[i : i + block] = np.mean(diff * diff, axis=2)
    return out


def dtw(dist: np.ndarray) -> AlignmentPath:
    """Dynamic time warping over a precomputed distance matrix.

    Finds the cheapest monotone path from (0, 0) to (m-1, n-1) where each
    cell contributes its distance once. Ties prefer the diagonal.
    """
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] < 1 or dist.shape[1] < 1:
        raise InvalidInput(f"distance matrix must be non-empty 2-D, got {dist.shape}")
    if not np.isfinite(dist).all():
        raise InvalidInput("distance matrix contains non-finite values")
    m, n = dist.shape
    acc = np.full((m, n), np.inf)
    acc[0, 0] = dist[0, 0]
    for i in range(m):
        for j in range(n):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
            if i > 0 and acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if j > 0 and acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = best + dist[i, j]
    # Backtrack, preferring the diagonal on ties.
    pairs = [(m - 1, n - 1)]
    i, j = m - 1, n - 1
    while (i, j) != (0, 0):
        if i > 0 and j > 0:
            prev = (i - 1, j - 1)
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                prev, best = (i - 1, j), acc[i - 1, j]
            if acc[i, j - 1] < best:
                prev = (i, j - 1)
        elif i > 0:
            prev = (i - 1, j)
        else:
            prev = (i, j - 1)
        pairs.append(prev)
        i, j = prev
    pairs.reverse()
    return AlignmentPath(pairs=np.array(pairs, dtype=np.int64), cost=float(acc[-1, -1]))


def boundaries_to_frames(
    bounds: WordBoundaries, hop_size: int, n_frames: int
) -> list[tuple[int, int]]:
    """Convert sample segments to frame ranges: floor(start/hop) .. ceil(end/hop)."""
    ranges = []
    for start, end, label in bounds.segments:
        lo = start // hop_size
        hi = min(-(-end // hop_size), n_frames)
        if lo >= n_frames:
            raise InvalidInput(
                f"segment {label!r} starts at frame {lo}, beyond {n_frames} frames"
            )
        if hi <= lo:
            raise InvalidInput(f"segment {label!r} maps to an empty frame range")
        ranges.append((lo, hi))
    return ranges


def segment_align(
    source: FeatureSequence,
    target: FeatureSequence,
    source_bounds: WordBoundaries,
    target_bounds: WordBoundaries,
) -> AlignmentPath:
    """Word-by-word DTW between two parallel utterances.

    Each word is aligned independently within its own frame range; the
    resulting paths are concatenated with their frame offsets. Frames outside
    every word (pauses) are not paired.
    """
    if source.hop_size != target.hop_size:
        raise HopMismatch(
            f"hop sizes differ: {source.hop_size} vs {target.hop_size}; "
            "reconcile frame rates first"
        )
    if len(source_bounds.segments) != len(target_bounds.segments):
        raise BoundaryMismatch(
            f"segment counts differ: {len(source_bounds.segments)} vs "
            f"{len(target_bounds.segments)}"
        )
    if not source_bounds.segments:
        raise InvalidInput("no segments to align")
    src_ranges = boundaries_to_frames(source_bounds, source.hop_size, source.n_frames)
    tgt_ranges = boundaries_to_frames(target_bounds, target.hop_size, target.n_frames)
    all_pairs = []
    total = 0.0
    for (s_lo, s_hi), (t_lo, t_hi) in zip(src_ranges, tgt_ranges):
        dist = frame_distance(source.data[s_lo:s_hi], target.data[t_lo:t_hi])
        path = dtw(dist)
        all_pairs.append(path.pairs + np.array([s_lo, t_lo]))
        total += path.cost
    return AlignmentPath(pairs=np.concatenate(all_pairs), cost=total)


def save_alignment(path: AlignmentPath, file) -> None:
    """Write a path as TSV: a cost line, then one source/target pair per line."""
    lines = [f"cost\t{path.cost!r}"]
    lines.extend(f"{i}\t{j}" for i, j in path.pairs)
    tmp = str(file) + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, file)
    except OSError as exc:
        raise IoError(f"cannot write {file}: {exc}") from exc


def load_alignment(file) -> AlignmentPath:
    try:
        with open(file, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {file}: {exc}") from exc
    if not lines or not lines[0].startswith("cost\t"):
        raise CorruptFile(f"{file}: missing cost header")
    try:
        cost = float(lines[0].split("\t", 1)[1])
        pairs = [
            (int(a), int(b))
            for a, b in (line.split("\t") for line in lines[1:] if line)
        ]
    except ValueError as exc:
        raise CorruptFile(f"{file}: malformed alignment line: {exc}") from exc
    return AlignmentPath(pairs=np.array(pairs, dtype=np.int64), cost=cost)


def apply_alignment(
    path: AlignmentPath, source: FeatureSequence, target: FeatureSequence
) -> tuple[FeatureSequence, FeatureSequence]:
    """Gather both sequences along a path, producing equal-length frame pairs."""
    si = path.pairs[:, 0]
    ti = path.pairs[:, 1]
    if si[-1] >= source.n_frames or ti[-1] >= target.n_frames:
        raise InvalidInput(
            f"path addresses frame ({si[-1]}, {ti[-1]}) outside "
            f"({source.n_frames}, {target.n_frames})"
        )
    warped_source = FeatureSequence(
        domain=source.domain,
        data=source.data[si],
        hop_size=source.hop_size,
        sample_rate=source.sample_rate,
        utterance_id=source.utterance_id,
    )
    warped_target = FeatureSequence(
        domain=target.domain,
        data=target.data[ti],
        hop_size=target.hop_size,
        sample_rate=target.sample_rate,
        utterance_id=target.utterance_id,
    )
    return warped_source, warped_target
