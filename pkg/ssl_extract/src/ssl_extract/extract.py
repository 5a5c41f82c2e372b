"""Run a pretrained speech model over WAV files and collect frame embeddings."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .cdfx import write_ssl_features
from .errors import DimsMismatch, InvalidAudio, ModelLoadError, RateMismatch

log = logging.getLogger("ssl_extract")

TARGET_RATE = 16000
HOP_SIZE = 320
EXPECTED_DIMS = 768


@dataclass
class DumpConfig:
    model: str
    layer: int = -1
    resample: bool = False
    expected_dims: int = EXPECTED_DIMS


def load_model(name_or_path: str):
    """Load the model in eval mode; failures get one readable message."""
    try:
        from transformers import AutoModel

        model = AutoModel.from_pretrained(name_or_path)
    except Exception as exc:
        raise ModelLoadError(f"could not load model {name_or_path!r}: {exc}") from exc
    model.eval()
    return model


def read_mono_wav(path, resample: bool = False) -> np.ndarray:
    """Read a mono WAV as float32 in [-1, 1] at the model's 16 kHz rate."""
    try:
        rate, data = scipy.io.wavfile.read(path)
    except Exception as exc:
        raise InvalidAudio(f"{path}: not a readable WAV file: {exc}") from exc
    if data.ndim != 1:
        raise InvalidAudio(f"{path}: expected mono audio, got {data.ndim} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float32) / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float32) - 128.0) / 128.0
    else:
        samples = data.astype(np.float32)
    if rate != TARGET_RATE:
        if not resample:
            raise RateMismatch(
                f"{path}: sample rate {rate} != {TARGET_RATE}; pass --resample to convert"
            )
        g = math.gcd(TARGET_RATE, rate)
        samples = scipy.signal.resample_poly(
            samples.astype(np.float64), TARGET_RATE // g, rate // g
        ).astype(np.float32)
    return samples


def embed_utterance(model, samples: np.ndarray, layer: int) -> np.ndarray:
    """One forward pass; returns (frames, dims) float32 from the chosen layer."""
    import torch

    if len(samples) < 400:
        raise InvalidAudio(
            f"utterance has {len(samples)} samples, shorter than one 400-sample frame"
        )
    with torch.no_grad():
        out = model(
            torch.from_numpy(np.ascontiguousarray(samples, dtype=np.float32))[None, :],
            output_hidden_states=True,
        )
    states = out.hidden_states
    if not -len(states) <= layer < len(states):
        raise ModelLoadError(
            f"layer {layer} out of range; model exposes {len(states)} hidden states"
        )
    return states[layer][0].cpu().numpy().astype(np.float32)


def dump_embeddings(wav_paths, cfg: DumpConfig, out_dir) -> list:
    """Embed every WAV and write one .ssl.cdfx file per utterance."""
    model = load_model(cfg.model)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in wav_paths:
        samples = read_mono_wav(path, resample=cfg.resample)
        emb = embed_utterance(model, samples, cfg.layer)
        if emb.shape[1] != cfg.expected_dims:
            raise DimsMismatch(
                f"{path}: model produced {emb.shape[1]}-dim frames, "
                f"expected {cfg.expected_dims}"
            )
        dest = out / f"{Path(path).stem}.ssl.cdfx"
        write_ssl_features(emb, HOP_SIZE, TARGET_RATE, dest)
        log.debug("wrote %s (%d frames)", dest, emb.shape[0])
        written.append(dest)
    return written
