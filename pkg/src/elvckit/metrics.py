"""Objective evaluation: mel-cepstral distortion and pitch agreement."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .align import dtw, frame_distance
from .dsp import AudioBuffer, F0Track, StftConfig, estimate_f0, extract_mcc
from .errors import InvalidInput, IoError
from .features import FeatureSequence

# 10 / ln(10) * sqrt(2), the classic distortion scaling for log cepstra.
MCD_SCALE = 10.0 / np.log(10.0) * np.sqrt(2.0)


@dataclass
class EvalResult:
    """Per-utterance metric row; None marks metrics that are undefined."""

    utterance_id: str
    mcd: Optional[float]
    f0_rmse: Optional[float]
    f0_corr: Optional[float]
    n_frames: int


def _as_mcc_array(x) -> np.ndarray:
    data = x.data if isinstance(x, FeatureSequence) else np.asarray(x)
    if data.ndim != 2 or data.shape[1] < 2:
        raise InvalidInput(
            "cepstral input must be 2-D with an energy column plus coefficients"
        )
    return data.astype(np.float64)


def mcd(a, b, align: bool = True) -> float:
    """Mean mel-cepstral distortion in dB, excluding the energy coefficient.

    With ``align`` the sequences are warped onto each other by DTW over the
    shape coefficients first; otherwise they must already be frame-parallel.
    """
    ca = _as_mcc_array(a)[:, 1:]
    cb = _as_mcc_array(b)[:, 1:]
    if ca.shape[1] != cb.shape[1]:
        raise InvalidInput(f"coefficient counts differ: {ca.shape[1]} vs {cb.shape[1]}")
    if align:
        path = dtw(frame_distance(ca, cb))
        diffs = ca[path.pairs[:, 0]] - cb[path.pairs[:, 1]]
    else:
        if ca.shape[0] != cb.shape[0]:
            raise InvalidInput(
                f"unaligned inputs must have equal frames: {ca.shape[0]} vs {cb.shape[0]}"
            )
        if ca.shape[0] == 0:
            raise InvalidInput("cannot compute distortion over zero frames")
        diffs = ca - cb
    per_frame = MCD_SCALE * np.sqrt(np.sum(diffs * diffs, axis=1))
    return float(per_frame.mean())


def _covoiced(a: F0Track, b: F0Track) -> tuple[np.ndarray, np.ndarray]:
    if a.n_frames != b.n_frames:
        raise InvalidInput(
            f"pitch tracks must be frame-parallel: {a.n_frames} vs {b.n_frames}"
        )
    mask = a.voiced & b.voiced
    return a.f0[mask], b.f0[mask]


def f0_rmse(a: F0Track, b: F0Track) -> Optional[float]:
    """Root mean squared pitch error in Hz over frames voiced in both tracks."""
    fa, fb = _covoiced(a, b)
    if fa.size == 0:
        return None
    return float(np.sqrt(np.mean((fa - fb) ** 2)))


def f0_corr(a: F0Track, b: F0Track) -> Optional[float]:
    """Pearson correlation of pitch over co-voiced frames.

    Undefined (None) with fewer than two such frames or when either track is
    constant there.
    """
    fa, fb = _covoiced(a, b)
    if fa.size < 2:
        return None
    da = fa - fa.mean()
    db = fb - fb.mean()
    denom = np.sqrt(np.sum(da * da) * np.sum(db * db))
    if denom == 0.0:
        return None
    return float(np.sum(da * db) / denom)


def evaluate_pair(
    utterance_id: str,
    converted: AudioBuffer,
    reference: AudioBuffer,
    config: StftConfig = StftConfig(),
) -> EvalResult:
    """All metrics for one converted/reference audio pair.

    The cepstral DTW path doubles as the frame pairing for pitch metrics,
    since cepstra and pitch are computed on the same frame grid.
    """
    mcc_c = extract_mcc(converted, config)
    mcc_r = extract_mcc(reference, config)
    path = dtw(frame_distance(mcc_c.data[:, 1:], mcc_r.data[:, 1:]))
    diffs = (
        mcc_c.data[path.pairs[:, 0], 1:].astype(np.float64)
        - mcc_r.data[path.pairs[:, 1], 1:].astype(np.float64)
    )
    mcd_value = float((MCD_SCALE * np.sqrt(np.sum(diffs * diffs, axis=1))).mean())
    # Pitch tracks share the cepstral frame grid, so the DTW path indexes
    # straight into them.
    f0_c = estimate_f0(converted, config)
    f0_r = estimate_f0(reference, config)
    ci = path.pairs[:, 0]
    ri = path.pairs[:, 1]
    paired_c = F0Track(f0_c.f0[ci], f0_c.voiced[ci], config.hop_size, converted.sample_rate)
    paired_r = F0Track(f0_r.f0[ri], f0_r.voiced[ri], config.hop_size, reference.sample_rate)
    return EvalResult(
        utterance_id=utterance_id,
        mcd=mcd_value,
        f0_rmse=f0_rmse(paired_c, paired_r),
        f0_corr=f0_corr(paired_c, paired_r),
        n_frames=len(path),
    )


def evaluate_system(pairs, config: StftConfig = StftConfig()) -> list:
    """Evaluate (utterance_id, converted, reference) audio triples."""
    results = []
    for utterance_id, converted, reference in pairs:
        results.append(evaluate_pair(utterance_id, converted, reference, config))
    return results


def _fmt(value: Optional[float]) -> str:
    return "NA" if value is None else f"{value:.6f}"


def format_report(results) -> str:
    """Tab-separated per-utterance rows plus a MEAN summary over defined values."""
    lines = ["utterance_id\tmcd\tf0_rmse\tf0_corr\tn_frames"]
    for r in results:
        lines.append(
            f"{r.utterance_id}\t{_fmt(r.mcd)}\t{_fmt(r.f0_rmse)}\t"
            f"{_fmt(r.f0_corr)}\t{r.n_frames}"
        )
    def mean_of(values):
        known = [v for v in values if v is not None]
        return sum(known) / len(known) if known else None

    mean_mcd = mean_of([r.mcd for r in results])
    mean_rmse = mean_of([r.f0_rmse for r in results])
    mean_corr = mean_of([r.f0_corr for r in results])
    mean_frames = mean_of([float(r.n_frames) for r in results])
    lines.append(
        f"MEAN\t{_fmt(mean_mcd)}\t{_fmt(mean_rmse)}\t{_fmt(mean_corr)}\t"
        f"{_fmt(mean_frames)}"
    )
    return "\n".join(lines) + "\n"


def write_report(results, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(format_report(results))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
