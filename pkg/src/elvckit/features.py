"""Feature file format (CDFX), corpus manifests, and frame-rate reconciliation.

The CDFX container is the interchange format between every stage of the
pipeline and between this toolkit and external embedding dumpers.  Layout,
little-endian throughout:

    magic   4 bytes  "CDFX"
    version u32      currently 1
    domain  u8       0=Mel 1=MCC 2=SP 3=SSL
    dims    u32
    frames  u32
    hop     u32      samples
    sr      u32      Hz
    payload frames*dims float32, frame-major (row-major)
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    CorruptFile,
    DomainMismatch,
    HopMismatch,
    InvalidData,
    InvalidInput,
    InvalidManifest,
    IoError,
    MissingFile,
)

CDFX_MAGIC = b"CDFX"
CDFX_VERSION = 1
_HEADER = struct.Struct("<4sIBIIII")


class FeatureDomain(Enum):
    """Feature domains carried by the pipeline, with their wire codes."""

    MEL = 0
    MCC = 1
    SP = 2
    SSL = 3

    @property
    def nominal_dims(self) -> int:
        return _NOMINAL_DIMS[self]


# Default dimensionalities under the reference configuration (80 mel bands,
# 24 cepstral coefficients plus energy, 1024-point spectra, 768-dim embeddings).
_NOMINAL_DIMS = {
    FeatureDomain.MEL: 80,
    FeatureDomain.MCC: 25,
    FeatureDomain.SP: 513,
    FeatureDomain.SSL: 768,
}

_DOMAIN_BY_CODE = {d.value: d for d in FeatureDomain}


@dataclass
class FeatureSequence:
    """A time-major frame matrix tagged with its domain and frame timing.

    ``data`` is stored as float32 so that disk round-trips are bit-exact.
    """

    domain: FeatureDomain
    data: np.ndarray
    hop_size: int
    sample_rate: int
    utterance_id: str = ""

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise InvalidInput(f"feature data must be 2-D, got shape {arr.shape}")
        if arr.shape[1] < 1:
            raise InvalidInput("feature data must have at least one dimension")
        if not np.isfinite(arr).all():
            raise InvalidData("feature data contains non-finite values")
        if self.hop_size <= 0:
            raise InvalidInput(f"hop_size must be positive, got {self.hop_size}")
        if self.sample_rate <= 0:
            raise InvalidInput(f"sample_rate must be positive, got {self.sample_rate}")
        self.data = arr

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    def validate_strict(self) -> None:
        """Check that dims match the domain's nominal dimensionality."""
        want = self.domain.nominal_dims
        if self.dims != want:
            raise DomainMismatch(
                f"{self.domain.name} features must have {want} dims, got {self.dims}"
            )


def write_features(seq: FeatureSequence, path) -> None:
    """Write a feature sequence to ``path`` in CDFX format."""
    header = _HEADER.pack(
        CDFX_MAGIC,
        CDFX_VERSION,
        seq.domain.value,
        seq.dims,
        seq.n_frames,
        seq.hop_size,
        seq.sample_rate,
    )
    payload = seq.data.astype("<f4", copy=False).tobytes()
    tmp = str(path) + ".tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_features(path) -> FeatureSequence:
    """Read a CDFX file, validating header and payload."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise CorruptFile(f"{path}: shorter than CDFX header")
    magic, version, code, dims, frames, hop, sr = _HEADER.unpack_from(blob)
    if magic != CDFX_MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    if version != CDFX_VERSION:
        raise CorruptFile(f"{path}: unsupported version {version}")
    if code not in _DOMAIN_BY_CODE:
        raise CorruptFile(f"{path}: unknown domain code {code}")
    expected = _HEADER.size + 4 * dims * frames
    if len(blob) != expected:
        raise CorruptFile(
            f"{path}: payload length {len(blob) - _HEADER.size} does not match "
            f"dims={dims} frames={frames}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(frames, dims)
    if not np.isfinite(data).all():
        raise InvalidData(f"{path}: payload contains non-finite values")
    return FeatureSequence(
        domain=_DOMAIN_BY_CODE[code],
        data=data.copy(),
        hop_size=hop,
        sample_rate=sr,
        utterance_id=Path(path).stem.split(".")[0],
    )


def ingest_ssl(path, expected_hop: int = 320) -> FeatureSequence:
    """Load an externally produced SSL embedding file and validate its contract."""
    seq = read_features(path)
    if seq.domain is not FeatureDomain.SSL:
        raise DomainMismatch(f"{path}: expected SSL domain, got {seq.domain.name}")
    if seq.dims != FeatureDomain.SSL.nominal_dims:
        raise DomainMismatch(
            f"{path}: SSL embeddings must have "
            f"{FeatureDomain.SSL.nominal_dims} dims, got {seq.dims}"
        )
    if seq.hop_size != expected_hop:
        raise HopMismatch(
            f"{path}: hop {seq.hop_size} does not match expected {expected_hop}"
        )
    return seq


def reconcile_frames(
    a: FeatureSequence, b: FeatureSequence
) -> tuple[FeatureSequence, FeatureSequence]:
    """Bring two sequences onto a common frame grid.

    Equal hops: truncate both to the shorter frame count.  Unequal hops: the
    finer-hop sequence is linearly interpolated onto the coarser grid first.
    Frame k is anchored at sample k*hop.
    """
    if a.sample_rate != b.sample_rate:
        raise InvalidInput(
            f"sample rates differ: {a.sample_rate} vs {b.sample_rate}"
        )
    if a.hop_size == b.hop_size:
        n = min(a.n_frames, b.n_frames)
        return _truncated(a, n), _truncated(b, n)
    fine, coarse = (a, b) if a.hop_size < b.hop_size else (b, a)
    resampled = _resample_to_hop(fine, coarse.hop_size)
    n = min(resampled.n_frames, coarse.n_frames)
    fine_out = _truncated(resampled, n)
    coarse_out = _truncated(coarse, n)
    if a.hop_size < b.hop_size:
        return fine_out, coarse_out
    return coarse_out, fine_out


def _truncated(seq: FeatureSequence, n: int) -> FeatureSequence:
    if n < 1:
        raise InvalidInput("reconciliation left no overlapping frames")
    return FeatureSequence(
        domain=seq.domain,
        data=seq.data[:n],
        hop_size=seq.hop_size,
        sample_rate=seq.sample_rate,
        utterance_id=seq.utterance_id,
    )


def _resample_to_hop(seq: FeatureSequence, new_hop: int) -> FeatureSequence:
    # Target frame j sits at sample j*new_hop, i.e. source index j*new_hop/hop.
    # Only interpolated points inside the source span are kept.
    src = seq.data.astype(np.float64)
    m = seq.n_frames
    n_out = int(np.floor((m - 1) * seq.hop_size / new_hop)) + 1
    pos = np.arange(n_out) * (new_hop / seq.hop_size)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, m - 1)
    frac = (pos - lo)[:, None]
    out = src[lo] * (1.0 - frac) + src[hi] * frac
    return FeatureSequence(
        domain=seq.domain,
        data=out.astype(np.float32),
        hop_size=new_hop,
        sample_rate=seq.sample_rate,
        utterance_id=seq.utterance_id,
    )


@dataclass
class UtteranceManifest:
    """One corpus record: audio file, speaker, optional parallel link."""

    utterance_id: str
    speaker_id: str
    audio_path: str
    parallel_id: Optional[str] = None
    boundaries_path: Optional[str] = None


@dataclass
class WordBoundaries:
    """Sorted, non-overlapping word segments in sample units."""

    segments: list[tuple[int, int, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        prev_end = 0
        for start, end, label in self.segments:
            if start < 0 or end <= start:
                raise InvalidInput(f"bad segment ({start}, {end}, {label!r})")
            if start < prev_end:
                raise InvalidInput(
                    f"segment ({start}, {end}) overlaps or precedes its neighbour"
                )
            prev_end = end


def load_manifest(path) -> list[UtteranceManifest]:
    """Parse a tab-separated manifest file.

    Line format: utterance_id, speaker_id, audio_path, parallel_id or '-',
    boundaries_path or '-'.  Blank lines are skipped.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    records: list[UtteranceManifest] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise InvalidManifest(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        utt, spk, audio, parallel, bounds = parts
        if not utt or not spk or not audio:
            raise InvalidManifest(f"{path}:{lineno}: empty mandatory field")
        if utt in seen:
            raise InvalidManifest(f"{path}:{lineno}: duplicate utterance_id {utt!r}")
        seen.add(utt)
        records.append(
            UtteranceManifest(
                utterance_id=utt,
                speaker_id=spk,
                audio_path=audio,
                parallel_id=None if parallel == "-" else parallel,
                boundaries_path=None if bounds == "-" else bounds,
            )
        )
    return records


def save_manifest(records: list[UtteranceManifest], path) -> None:
    lines = []
    for r in records:
        lines.append(
            "\t".join(
                [
                    r.utterance_id,
                    r.speaker_id,
                    r.audio_path,
                    r.parallel_id or "-",
                    r.boundaries_path or "-",
                ]
            )
        )
    _atomic_write_text(path, "\n".join(lines) + "\n")


def validate_manifest_files(records: list[UtteranceManifest], base_dir=None) -> None:
    """Check that every referenced file exists; raise MissingFile otherwise."""
    base = Path(base_dir) if base_dir is not None else None
    for r in records:
        for p in (r.audio_path, r.boundaries_path):
            if p is None:
                continue
            full = Path(p) if base is None else base / p
            if not full.exists():
                raise MissingFile(f"{r.utterance_id}: missing file {full}")


def load_boundaries(path) -> WordBoundaries:
    """Parse a word-boundary file: start_sample<TAB>end_sample<TAB>label."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    segments = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise InvalidInput(f"{path}:{lineno}: expected 3 fields")
        try:
            start, end = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise InvalidInput(f"{path}:{lineno}: non-integer boundary") from exc
        segments.append((start, end, parts[2]))
    return WordBoundaries(segments=segments)


def save_boundaries(bounds: WordBoundaries, path) -> None:
    lines = [f"{s}\t{e}\t{label}" for s, e, label in bounds.segments]
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _atomic_write_text(path, text: str) -> None:
    tmp = str(path) + ".tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
