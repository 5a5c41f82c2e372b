"""Writer for the CDFX feature container (embedding domain only).

Layout: magic "CDFX", version u32 LE, domain u8, dims u32, frames u32,
hop u32, sample_rate u32, then frames x dims float32 LE row-major. The
byte format is the interchange contract with the consuming toolkit, so it
is implemented here independently rather than imported.
"""

import os
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidAudio

CDFX_MAGIC = b"CDFX"
CDFX_VERSION = 1
DOMAIN_SSL = 3
_HEADER = struct.Struct("<4sIBIIII")


def write_ssl_features(data, hop_size: int, sample_rate: int, path) -> Path:
    """Write one utterance's embeddings; the write is atomic."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidAudio(f"embeddings must be (frames, dims), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise InvalidAudio("embeddings contain NaN or infinity")
    header = _HEADER.pack(
        CDFX_MAGIC,
        CDFX_VERSION,
        DOMAIN_SSL,
        arr.shape[1],
        arr.shape[0],
        int(hop_size),
        int(sample_rate),
    )
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + arr.tobytes())
    os.replace(tmp, path)
    return path
