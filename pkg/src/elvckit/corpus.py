"""Synthetic parallel corpus for smoke tests, plus the embedding stand-in.

Utterances are sequences of vowel-like words: a glottal pulse source shaped
by per-speaker formant resonators. Two normal speakers differ in pitch range
and formant scale; the electrolaryngeal speaker renders the same words with
a constant-rate excitation, weakened formants, broadband buzz, and per-word
tempo drift. Word boundaries are exact because the signal is constructed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.signal

from .dsp import AudioBuffer, write_wav
from .errors import DomainMismatch, InvalidInput
from .features import (
    FeatureDomain,
    FeatureSequence,
    UtteranceManifest,
    WordBoundaries,
    save_boundaries,
    save_manifest,
)

SAMPLE_RATE = 16000

# First three formant frequencies (Hz) for the vowel inventory.
VOWELS = {
    "aa": (730.0, 1090.0, 2440.0),
    "iy": (270.0, 2290.0, 3010.0),
    "uw": (300.0, 870.0, 2240.0),
    "eh": (530.0, 1840.0, 2480.0),
    "ao": (570.0, 840.0, 2410.0),
}
VOWEL_NAMES = sorted(VOWELS)

NL_SPEAKERS = {
    # speaker id: (f0 low, f0 high, formant scale)
    "nl_a": (180.0, 260.0, 1.05),
    "nl_b": (120.0, 170.0, 0.90),
}
EL_SPEAKER = "el_x"
EL_RATE = 100.0

STANDIN_SEED = 7682


@dataclass
class SyntheticCorpus:
    root: Path
    manifest_path: Path
    records: list


def _pulse_train(n: int, f0_curve: np.ndarray, sr: int) -> np.ndarray:
    """Impulse train whose instantaneous rate follows f0_curve."""
    phase = np.cumsum(f0_curve) / sr
    out = np.zeros(n)
    out[np.diff(np.floor(phase), prepend=0.0) > 0] = 1.0
    return out


def _resonator_sos(freq: float, bandwidth: float, sr: int):
    r = np.exp(-np.pi * bandwidth / sr)
    theta = 2.0 * np.pi * freq / sr
    # Poles at r * exp(+-j theta), unit gain at the resonance peak roughly.
    return [1.0 - r, 0.0, 0.0, 1.0, -2.0 * r * np.cos(theta), r * r]


def _apply_formants(source: np.ndarray, formants, scale: float, strength: float, sr: int):
    out = source
    for f in formants:
        freq = min(f * scale, sr / 2.0 - 200.0)
        bandwidth = (80.0 + freq / 10.0) / max(strength, 1e-3)
        sos = np.array([_resonator_sos(freq, bandwidth, sr)])
        out = scipy.signal.sosfilt(sos, out)
    return out


def _fade(n: int, sr: int, ms: float = 10.0) -> np.ndarray:
    ramp = min(max(int(sr * ms / 1000.0), 1), n // 2)
    env = np.ones(n)
    win = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    env[:ramp] = win
    env[-ramp:] = win[::-1]
    return env


def _render_word(vowel: str, n: int, speaker: str, rng, sr: int) -> np.ndarray:
    formants = VOWELS[vowel]
    if speaker == EL_SPEAKER:
        f0_curve = np.full(n, EL_RATE)
        source = _pulse_train(n, f0_curve, sr)
        voiced = _apply_formants(source, formants, 1.0, 0.5, sr)
        # The device buzz leaks past the vocal tract almost unshaped.
        leak = scipy.signal.sosfilt(
            np.array([_resonator_sos(300.0, 250.0, sr)]), source
        )
        buzz = 0.03 * rng.standard_normal(n)
        word = voiced + 3.0 * leak + scipy.signal.sosfilt(
            np.array([_resonator_sos(2500.0, 1500.0, sr)]), buzz
        )
    else:
        lo, hi, scale = NL_SPEAKERS[speaker]
        start = rng.uniform(lo, hi)
        end = np.clip(start * rng.uniform(0.85, 1.15), lo, hi)
        f0_curve = np.linspace(start, end, n)
        source = _pulse_train(n, f0_curve, sr)
        word = _apply_formants(source, formants, scale, 1.0, sr)
    word = word * _fade(n, sr)
    peak = np.max(np.abs(word))
    return word * (0.45 / peak) if peak > 0 else word


def _utterance_plan(rng, n_words: int, seconds: float):
    """Shared word content: vowels and nominal durations that fill `seconds`."""
    vowels = [VOWEL_NAMES[int(rng.integers(len(VOWEL_NAMES)))] for _ in range(n_words)]
    weights = rng.uniform(0.7, 1.3, n_words)
    gaps = rng.uniform(0.08, 0.15, n_words + 1)
    speech_time = seconds - gaps.sum()
    if speech_time <= 0.15 * n_words:
        raise InvalidInput("utterance too short for the requested word count")
    durations = weights / weights.sum() * speech_time
    return vowels, durations, gaps


def _render_utterance(vowels, durations, gaps, speaker: str, rng, sr: int):
    pieces = []
    segments = []
    cursor = 0
    for i, (vowel, dur) in enumerate(zip(vowels, durations)):
        gap = int(gaps[i] * sr)
        pieces.append(np.zeros(gap))
        cursor += gap
        if speaker == EL_SPEAKER:
            # The electrolarynx user holds words for a different time.
            dur = dur * rng.uniform(0.8, 1.3)
        n = max(int(dur * sr), int(0.05 * sr))
        pieces.append(_render_word(vowel, n, speaker, rng, sr))
        segments.append((cursor, cursor + n, vowel))
        cursor += n
    pieces.append(np.zeros(int(gaps[-1] * sr)))
    samples = np.concatenate(pieces)
    return AudioBuffer(samples=samples, sample_rate=sr), WordBoundaries(segments=segments)


def generate_corpus(
    root,
    n_utterances: int = 20,
    seconds: float = 3.0,
    n_words: int = 4,
    seed: int = 0,
    sample_rate: int = SAMPLE_RATE,
) -> SyntheticCorpus:
    """Render a parallel corpus and manifest under ``root``.

    Every utterance exists for both normal speakers and the EL speaker; EL
    rows point at the first normal speaker's rendition as their parallel
    reference. All rows carry word boundaries.
    """
    if n_utterances < 1:
        raise InvalidInput("need at least one utterance")
    root = Path(root)
    (root / "wav").mkdir(parents=True, exist_ok=True)
    (root / "lab").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    speakers = [*NL_SPEAKERS, EL_SPEAKER]
    parallel_target = next(iter(NL_SPEAKERS))
    for i in range(n_utterances):
        vowels, durations, gaps = _utterance_plan(rng, n_words, seconds)
        for speaker in speakers:
            utt_id = f"{speaker}_{i:03d}"
            audio, bounds = _render_utterance(
                vowels, durations, gaps, speaker, rng, sample_rate
            )
            wav_rel = f"wav/{utt_id}.wav"
            lab_rel = f"lab/{utt_id}.lab"
            write_wav(audio, root / wav_rel)
            save_boundaries(bounds, root / lab_rel)
            records.append(
                UtteranceManifest(
                    utterance_id=utt_id,
                    speaker_id=speaker,
                    audio_path=wav_rel,
                    parallel_id=(
                        f"{parallel_target}_{i:03d}" if speaker == EL_SPEAKER else None
                    ),
                    boundaries_path=lab_rel,
                )
            )
    manifest_path = root / "manifest.tsv"
    save_manifest(records, manifest_path)
    return SyntheticCorpus(root=root, manifest_path=manifest_path, records=records)


# -- embedding stand-in ------------------------------------------------------


def standin_matrix(env_dims: int, ssl_dims: int = 768) -> np.ndarray:
    """Fixed random projection from envelope space to embedding space.

    With ssl_dims > env_dims the projection has full column rank almost
    surely, so the envelope is exactly recoverable by pseudo-inverse.
    """
    if ssl_dims < env_dims:
        raise InvalidInput("embedding dims must not be smaller than envelope dims")
    rng = np.random.default_rng(STANDIN_SEED)
    return (rng.standard_normal((ssl_dims, env_dims)) / np.sqrt(env_dims)).astype(
        np.float64
    )


def ssl_standin_from_envelope(env: FeatureSequence, ssl_dims: int = 768) -> FeatureSequence:
    """Deterministic stand-in for an external embedding extractor."""
    if env.domain is not FeatureDomain.SP:
        raise DomainMismatch(f"stand-in wants SP input, got {env.domain.name}")
    proj = standin_matrix(env.dims, ssl_dims)
    data = env.data.astype(np.float64) @ proj.T
    return FeatureSequence(
        domain=FeatureDomain.SSL,
        data=data.astype(np.float32),
        hop_size=env.hop_size,
        sample_rate=env.sample_rate,
        utterance_id=env.utterance_id,
    )


def envelope_from_standin(ssl: FeatureSequence, env_dims: int) -> FeatureSequence:
    """Invert the stand-in projection back to a spectral envelope."""
    if ssl.domain is not FeatureDomain.SSL:
        raise DomainMismatch(f"expected SSL input, got {ssl.domain.name}")
    proj = standin_matrix(env_dims, ssl.dims)
    inv = np.linalg.pinv(proj)
    data = ssl.data.astype(np.float64) @ inv.T
    return FeatureSequence(
        domain=FeatureDomain.SP,
        data=data.astype(np.float32),
        hop_size=ssl.hop_size,
        sample_rate=ssl.sample_rate,
        utterance_id=ssl.utterance_id,
    )
