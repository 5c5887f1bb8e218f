"""PCM audio to log-mel features.

Pipeline: resample to 32 kHz, pad/truncate to 10 s, Hann-windowed
magnitude-squared STFT (window 1024 samples = 32 ms, hop 500 samples; the
nominal 15.6 ms hop is 499.2 samples, rounded to an integer hop with 0.16%
deviation), 64 Slaney-style triangular mel filters spanning 0-16 kHz, and a
natural log with additive floor 1e-10. A 10 s clip yields 638 x 64 frames.
"""

from __future__ import annotations

import hashlib
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import get_window, resample_poly

from mtda import checkpoint
from mtda.errors import ContractError
from mtda.manifest import write_manifest

TARGET_RATE = 32000
CLIP_SAMPLES = 10 * TARGET_RATE
WINDOW = 1024
HOP = 500
N_MELS = 64
LOG_FLOOR = 1e-10


@dataclass
class AudioClip:
    samples: np.ndarray  # mono, values in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise ContractError("audio clip is empty")
        if self.sample_rate <= 0:
            raise ContractError("sample rate must be positive")


@dataclass
class FeatureTensor:
    frames: np.ndarray  # time x 64
    frame_rate: float = TARGET_RATE / HOP


def resample(clip: AudioClip, target_hz: int = TARGET_RATE) -> AudioClip:
    """Resample to `target_hz` and fix the duration to exactly 10 s."""
    if clip.sample_rate == target_hz:
        samples = clip.samples
    else:
        from fractions import Fraction

        ratio = Fraction(target_hz, clip.sample_rate).limit_denominator(1000)
        samples = resample_poly(clip.samples, ratio.numerator, ratio.denominator)
    if len(samples) >= CLIP_SAMPLES:
        samples = samples[:CLIP_SAMPLES]
    else:
        samples = np.concatenate([samples, np.zeros(CLIP_SAMPLES - len(samples))])
    return AudioClip(samples=samples, sample_rate=target_hz)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = WINDOW, rate: int = TARGET_RATE) -> np.ndarray:
    """Slaney-style triangular filters (linear below 1 kHz, log above), 0 to rate/2."""

    def hz_to_mel(f):
        f = np.asarray(f, dtype=np.float64)
        lin = f / (200.0 / 3.0)
        log_region = f >= 1000.0
        log_mel = 15.0 + np.log(np.maximum(f, 1e-9) / 1000.0) / (np.log(6.4) / 27.0)
        return np.where(log_region, log_mel, lin)

    def mel_to_hz(m):
        m = np.asarray(m, dtype=np.float64)
        lin = m * (200.0 / 3.0)
        log_region = m >= 15.0
        log_hz = 1000.0 * np.exp((m - 15.0) * (np.log(6.4) / 27.0))
        return np.where(log_region, log_hz, lin)

    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2), n_mels + 2))
    fft_freqs = np.fft.rfftfreq(n_fft, d=1.0 / rate)
    fb = np.zeros((n_mels, len(fft_freqs)))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - center, 1e-12)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def band_center_freqs(n_mels: int = N_MELS, rate: int = TARGET_RATE) -> np.ndarray:
    fb = mel_filterbank(n_mels=n_mels, rate=rate)
    fft_freqs = np.fft.rfftfreq(WINDOW, d=1.0 / rate)
    return np.array([fft_freqs[np.argmax(row)] for row in fb])


def logmel(clip: AudioClip) -> FeatureTensor:
    """Log-mel spectrogram of a 32 kHz clip."""
    if clip.sample_rate != TARGET_RATE:
        raise ContractError(f"logmel expects {TARGET_RATE} Hz input, got {clip.sample_rate}")
    x = clip.samples
    n_frames = (len(x) - WINDOW) // HOP + 1
    if n_frames < 1:
        raise ContractError("clip shorter than one analysis window")
    window = get_window("hann", WINDOW, fftbins=True)
    idx = np.arange(WINDOW)[None, :] + HOP * np.arange(n_frames)[:, None]
    frames = x[idx] * window
    power = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    mel = power @ mel_filterbank().T
    return FeatureTensor(frames=np.log(mel + LOG_FLOOR))


def load_wav(path) -> AudioClip:
    """Read 16-bit PCM RIFF WAV; stereo is downmixed by channel averaging."""
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2:
            raise ContractError(f"{path}: only 16-bit PCM WAV is supported")
        rate = wf.getframerate()
        n_channels = wf.getnchannels()
        raw = wf.readframes(wf.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels > 1:
        data = data.reshape(-1, n_channels).mean(axis=1)
    return AudioClip(samples=data, sample_rate=rate)


@dataclass
class IngestResult:
    rows: list
    errors: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.errors


def ingest(rows, out_dir, manifest_out=None) -> IngestResult:
    """Extract features for every manifest row; content-addressed, so reruns skip.

    Output names embed a hash of the source bytes and frontend parameters;
    an up-to-date output file is never rewritten. Per-row failures are
    recorded and do not abort the batch.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    updated, errors = [], []
    for row in rows:
        try:
            payload = Path(row.path).read_bytes()
            digest = hashlib.sha256(
                payload + f"|{TARGET_RATE}|{WINDOW}|{HOP}|{N_MELS}|{LOG_FLOOR}".encode()
            ).hexdigest()[:16]
            feature_path = out_dir / f"{row.id}_{digest}.mtt"
            if not feature_path.exists():
                clip = resample(load_wav(row.path))
                feat = logmel(clip)
                checkpoint.save_tensors(feature_path, {"features": feat.frames})
            updated.append(row.with_feature(feature_path))
        except (ContractError, wave.Error, EOFError, OSError, ValueError) as exc:
            errors.append((row.id, str(exc)))
            updated.append(row)
    if manifest_out is not None:
        write_manifest(updated, manifest_out)
    return IngestResult(rows=updated, errors=errors)
