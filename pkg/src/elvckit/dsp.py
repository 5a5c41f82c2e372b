"""Signal-level operations: STFT analysis, feature extraction, pitch, synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io.wavfile

from .errors import InvalidData, InvalidInput, IoError
from .features import FeatureDomain, FeatureSequence

LOG_EPS = 1e-10
LIFTER_ORDER = 40
F0_FLOOR = 70.0
F0_CEILING = 400.0
VOICING_THRESHOLD = 0.3
GL_ITERATIONS = 60


@dataclass
class AudioBuffer:
    """Mono audio samples with their sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise InvalidInput(f"audio must be mono 1-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise InvalidData("audio contains non-finite samples")
        if self.sample_rate <= 0:
            raise InvalidInput(f"sample_rate must be positive, got {self.sample_rate}")
        self.samples = arr

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Analysis frame geometry. The default matches 1024/256 at 16 kHz."""

    frame_size: int = 1024
    hop_size: int = 256

    def __post_init__(self) -> None:
        if self.frame_size <= 0 or self.hop_size <= 0:
            raise InvalidInput("frame_size and hop_size must be positive")
        if self.hop_size > self.frame_size:
            raise InvalidInput("hop_size must not exceed frame_size")

    @property
    def n_bins(self) -> int:
        return self.frame_size // 2 + 1


@dataclass
class Spectrogram:
    """Complex STFT frames, frame-major (n_frames, n_bins)."""

    data: np.ndarray
    config: StftConfig
    sample_rate: int


@dataclass
class F0Track:
    """Per-frame fundamental frequency; 0.0 marks unvoiced frames."""

    f0: np.ndarray
    voiced: np.ndarray
    hop_size: int
    sample_rate: int

    n_frames: int = field(init=False)

    def __post_init__(self) -> None:
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0.shape != self.voiced.shape:
            raise InvalidInput("f0 and voiced must have the same shape")
        self.n_frames = len(self.f0)


def read_wav(path) -> AudioBuffer:
    """Read a mono 16-bit PCM WAV file into a float buffer in [-1, 1)."""
    try:
        sr, data = scipy.io.wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if data.ndim != 1:
        raise InvalidInput(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise InvalidInput(f"{path}: unsupported sample format {data.dtype}")
    return AudioBuffer(samples=samples, sample_rate=int(sr))


def write_wav(audio: AudioBuffer, path) -> None:
    """Write a buffer as mono 16-bit PCM, clipping to the representable range."""
    clipped = np.clip(audio.samples, -1.0, 32767.0 / 32768.0)
    pcm = np.round(clipped * 32768.0).astype(np.int16)
    try:
        scipy.io.wavfile.write(path, audio.sample_rate, pcm)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def hann_window(frame_size: int) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(frame_size)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame_size)


def n_frames_for(n_samples: int, hop_size: int) -> int:
    """Frame count used by every frame-based operation: ceil(len / hop)."""
    return -(-n_samples // hop_size)


def frame_signal(samples: np.ndarray, config: StftConfig) -> np.ndarray:
    """Slice a signal into overlapping frames, reflection-padding the tail.

    Frame k starts at sample k*hop. The signal must be at least one frame
    long so the reflection pad is always shorter than the data.
    """
    n = len(samples)
    if n < config.frame_size:
        raise InvalidInput(
            f"signal length {n} is shorter than frame_size {config.frame_size}"
        )
    frames = n_frames_for(n, config.hop_size)
    padded_len = (frames - 1) * config.hop_size + config.frame_size
    pad = padded_len - n
    if pad > 0:
        samples = np.concatenate([samples, samples[-2 : -2 - pad : -1]])
    idx = np.arange(frames)[:, None] * config.hop_size + np.arange(config.frame_size)
    return samples[idx]


def stft(audio: AudioBuffer, config: StftConfig = StftConfig()) -> Spectrogram:
    """Short-time Fourier transform with a periodic Hann window."""
    frames = frame_signal(audio.samples, config) * hann_window(config.frame_size)
    spec = np.fft.rfft(frames, axis=1)
    return Spectrogram(data=spec, config=config, sample_rate=audio.sample_rate)


def istft_least_squares(spec: Spectrogram) -> np.ndarray:
    """Least-squares inverse STFT via windowed overlap-add.

    Minimizes the squared error between the windowed frames of the output and
    the given frames: x = sum(w * y_k) / sum(w^2) position-wise.
    """
    config = spec.config
    frames = np.fft.irfft(spec.data, n=config.frame_size, axis=1)
    window = hann_window(config.frame_size)
    n_frames = frames.shape[0]
    total = (n_frames - 1) * config.hop_size + config.frame_size
    num = np.zeros(total)
    den = np.zeros(total)
    wsq = window * window
    for k in range(n_frames):
        start = k * config.hop_size
        num[start : start + config.frame_size] += frames[k] * window
        den[start : start + config.frame_size] += wsq
    return num / np.maximum(den, 1e-12)


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int = 80) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft//2 + 1)."""
    if n_mels < 1:
        raise InvalidInput("n_mels must be positive")
    n_bins = n_fft // 2 + 1
    # Band edges equally spaced on the mel scale from 0 Hz to Nyquist.
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bin_hz = np.arange(n_bins) * sample_rate / n_fft
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        left, center, right = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        up = (bin_hz - left) / max(center - left, 1e-12)
        down = (right - bin_hz) / max(right - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(up, down))
    return fb


def extract_mel(
    audio: AudioBuffer, config: StftConfig = StftConfig(), n_mels: int = 80
) -> FeatureSequence:
    """Log mel spectrogram of the magnitude STFT."""
    spec = stft(audio, config)
    mag = np.abs(spec.data)
    fb = mel_filterbank(audio.sample_rate, config.frame_size, n_mels)
    mel = np.log(mag @ fb.T + LOG_EPS)
    return FeatureSequence(
        domain=FeatureDomain.MEL,
        data=mel,
        hop_size=config.hop_size,
        sample_rate=audio.sample_rate,
    )


def dct_ii(x: np.ndarray, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II of each row, truncated to the first n_out coefficients."""
    n = x.shape[-1]
    if n_out > n:
        raise InvalidInput(f"cannot keep {n_out} coefficients from {n} inputs")
    k = np.arange(n_out)[:, None]
    basis = np.cos(np.pi * k * (2.0 * np.arange(n) + 1.0) / (2.0 * n))
    scale = np.full(n_out, np.sqrt(2.0 / n))
    scale[0] = np.sqrt(1.0 / n)
    return x @ basis.T * scale


def idct_ii(c: np.ndarray, n_out: int) -> np.ndarray:
    """Inverse of dct_ii for rows of n_out samples (missing coefficients as zero)."""
    n_coef = c.shape[-1]
    k = np.arange(n_coef)[:, None]
    basis = np.cos(np.pi * k * (2.0 * np.arange(n_out) + 1.0) / (2.0 * n_out))
    scale = np.full(n_coef, np.sqrt(2.0 / n_out))
    scale[0] = np.sqrt(1.0 / n_out)
    return (c * scale) @ basis


def mel_to_mcc(mel: FeatureSequence, n_coef: int = 24) -> FeatureSequence:
    """Mel cepstral coefficients from a log mel sequence: energy plus n_coef terms."""
    if mel.domain is not FeatureDomain.MEL:
        raise InvalidInput(f"expected MEL input, got {mel.domain.name}")
    mcc = dct_ii(mel.data.astype(np.float64), n_coef + 1)
    return FeatureSequence(
        domain=FeatureDomain.MCC,
        data=mcc,
        hop_size=mel.hop_size,
        sample_rate=mel.sample_rate,
        utterance_id=mel.utterance_id,
    )


def extract_mcc(
    audio: AudioBuffer, config: StftConfig = StftConfig(), n_coef: int = 24
) -> FeatureSequence:
    """Mel cepstra of the audio: column 0 is energy, columns 1..n_coef are shape."""
    return mel_to_mcc(extract_mel(audio, config), n_coef)


def extract_envelope(
    audio: AudioBuffer, config: StftConfig = StftConfig()
) -> FeatureSequence:
    """Smooth log spectral envelope via cepstral liftering.

    The log magnitude spectrum of each frame is transformed to the cepstral
    domain, quefrencies above LIFTER_ORDER are zeroed, and the result is
    transformed back. This keeps formant structure while removing harmonics.
    """
    spec = stft(audio, config)
    log_mag = np.log(np.abs(spec.data) + LOG_EPS)
    cep = np.fft.irfft(log_mag, n=config.frame_size, axis=1)
    lifter = np.zeros(config.frame_size)
    lifter[: LIFTER_ORDER + 1] = 1.0
    lifter[-LIFTER_ORDER:] = 1.0
    env = np.fft.rfft(cep * lifter, n=config.frame_size, axis=1).real
    return FeatureSequence(
        domain=FeatureDomain.SP,
        data=env,
        hop_size=config.hop_size,
        sample_rate=audio.sample_rate,
    )


def estimate_f0(
    audio: AudioBuffer,
    config: StftConfig = StftConfig(),
    f0_floor: float = F0_FLOOR,
    f0_ceiling: float = F0_CEILING,
    voicing_threshold: float = VOICING_THRESHOLD,
) -> F0Track:
    """Autocorrelation pitch tracker with parabolic peak refinement.

    Frames follow the same ceil(len/hop) grid as the STFT so pitch tracks and
    spectral features line up one-to-one. A frame is voiced when its best
    normalized autocorrelation peak in the lag search range reaches the
    voicing threshold.
    """
    if not 0.0 < f0_floor < f0_ceiling:
        raise InvalidInput(f"need 0 < floor < ceiling, got {f0_floor}, {f0_ceiling}")
    sr = audio.sample_rate
    if f0_ceiling >= sr / 2.0:
        raise InvalidInput(f"f0_ceiling {f0_ceiling} must be below Nyquist")
    lag_min = max(2, int(np.floor(sr / f0_ceiling)))
    lag_max = int(np.ceil(sr / f0_floor))
    # Window long enough to hold two periods of the lowest pitch.
    win = 2 * lag_max
    samples = audio.samples
    if len(samples) < win:
        samples = np.concatenate([samples, np.zeros(win - len(samples))])
    frames = n_frames_for(len(audio.samples), config.hop_size)
    needed = (frames - 1) * config.hop_size + win
    if len(samples) < needed:
        samples = np.concatenate([samples, np.zeros(needed - len(samples))])
    f0 = np.zeros(frames)
    voiced = np.zeros(frames, dtype=bool)
    for k in range(frames):
        seg = samples[k * config.hop_size : k * config.hop_size + win]
        seg = seg - seg.mean()
        e0 = float(seg @ seg)
        if e0 < 1e-12 * win:
            continue
        # Normalized autocorrelation over the admissible lag range.
        lags = np.arange(lag_min, lag_max + 1)
        r = np.empty(len(lags))
        for i, lag in enumerate(lags):
            a = seg[: win - lag]
            b = seg[lag:]
            denom = np.sqrt((a @ a) * (b @ b))
            r[i] = (a @ b) / denom if denom > 0 else 0.0
        best = _pick_peak(r, voicing_threshold)
        if best is None:
            continue
        i = best
        # Parabolic interpolation around the winning lag.
        delta = 0.0
        if 0 < i < len(r) - 1:
            denom = r[i - 1] - 2.0 * r[i] + r[i + 1]
            if abs(denom) > 1e-12:
                delta = float(np.clip(0.5 * (r[i - 1] - r[i + 1]) / denom, -0.5, 0.5))
        lag = lags[i] + delta
        f0[k] = float(np.clip(sr / lag, f0_floor, f0_ceiling))
        voiced[k] = True
    return F0Track(f0=f0, voiced=voiced, hop_size=config.hop_size, sample_rate=sr)


def _pick_peak(r: np.ndarray, threshold: float):
    """Best local maximum, breaking near-ties toward the shorter lag.

    Preferring the shortest lag within 95% of the global peak counters the
    subharmonic (octave-down) trap where the correlation at twice the period
    edges out the true one; the tight band keeps harmonics from winning.
    """
    r_max = float(r.max())
    if r_max < threshold:
        return None
    candidates = []
    for i in range(len(r)):
        left = r[i - 1] if i > 0 else -np.inf
        right = r[i + 1] if i < len(r) - 1 else -np.inf
        if r[i] >= left and r[i] >= right and r[i] >= threshold:
            candidates.append(i)
    if not candidates:
        return None
    for i in candidates:
        if r[i] >= 0.95 * r_max:
            return i
    return max(candidates, key=lambda i: r[i])


def griffin_lim(
    features: FeatureSequence,
    config: StftConfig = StftConfig(),
    n_iters: int = GL_ITERATIONS,
    seed: int = 0,
    return_objectives: bool = False,
):
    """Phase reconstruction from a magnitude target, then overlap-add synthesis.

    Accepts MEL (inverted through the filterbank pseudo-inverse) or SP (log
    envelope) features. Each iteration projects onto the target magnitude and
    back through the least-squares inverse STFT; the Frobenius distance
    between the target and the current magnitude never increases.
    """
    if n_iters < 1:
        raise InvalidInput("n_iters must be positive")
    mag = _target_magnitude(features, config)
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(mag.shape))
    objectives = []
    x = None
    for _ in range(n_iters):
        rebuilt = Spectrogram(
            data=mag * phase, config=config, sample_rate=features.sample_rate
        )
        x = istft_least_squares(rebuilt)
        z = np.fft.rfft(
            frame_signal_padded(x, config, mag.shape[0]) * hann_window(config.frame_size),
            axis=1,
        )
        zmag = np.abs(z)
        objectives.append(float(np.linalg.norm(mag - zmag)))
        phase = z / np.maximum(zmag, 1e-12)
    out = x[: mag.shape[0] * config.hop_size]
    peak = float(np.max(np.abs(out))) if len(out) else 0.0
    if peak > 1.0:
        out = out / peak
    audio = AudioBuffer(samples=out, sample_rate=features.sample_rate)
    if return_objectives:
        return audio, objectives
    return audio


def frame_signal_padded(samples: np.ndarray, config: StftConfig, n_frames: int):
    """Frame an exact-length synthesis buffer into n_frames windows."""
    needed = (n_frames - 1) * config.hop_size + config.frame_size
    if len(samples) < needed:
        samples = np.concatenate([samples, np.zeros(needed - len(samples))])
    idx = np.arange(n_frames)[:, None] * config.hop_size + np.arange(config.frame_size)
    return samples[idx]


def _target_magnitude(features: FeatureSequence, config: StftConfig) -> np.ndarray:
    if features.domain is FeatureDomain.MEL:
        fb = mel_filterbank(features.sample_rate, config.frame_size, features.dims)
        inv = np.linalg.pinv(fb)
        mel_mag = np.exp(features.data.astype(np.float64)) - LOG_EPS
        return np.maximum(mel_mag @ inv.T, 0.0)
    if features.domain is FeatureDomain.SP:
        if features.dims != config.n_bins:
            raise InvalidInput(
                f"envelope dims {features.dims} do not match config bins {config.n_bins}"
            )
        return np.maximum(np.exp(features.data.astype(np.float64)) - LOG_EPS, 0.0)
    raise InvalidInput(f"cannot synthesize from {features.domain.name} features")
