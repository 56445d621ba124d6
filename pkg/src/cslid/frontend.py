"""Log mel-filterbank energies: pre-emphasis, 25 ms Hamming frames every
10 ms, power spectrum, 26 triangular mel filters over [0, Nyquist], log.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np

DEFAULT_RATE = 8000


class FrontendError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise FrontendError("waveform must be one-dimensional (mono)")
        if self.sample_rate <= 0:
            raise FrontendError("sample rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise FrontendError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrontendConfig:
    preemphasis: float = 0.97
    frame_length: float = 0.025
    frame_shift: float = 0.010
    num_filters: int = 26
    low_freq: float = 0.0
    high_freq: Optional[float] = None  # Nyquist
    floor: float = 1e-10
    normalize: bool = False  # per-utterance mean/variance


def preemphasize(w: Waveform, alpha: float = 0.97) -> Waveform:
    if not 0.0 <= alpha < 1.0:
        raise FrontendError("pre-emphasis factor must lie in [0, 1)")
    x = w.samples
    if len(x) == 0:
        raise FrontendError("empty input")
    out = np.empty_like(x)
    out[0] = x[0]
    out[1:] = x[1:] - alpha * x[:-1]
    return Waveform(out, w.sample_rate)


def frame_samples(sample_rate: int, frame_length_s: float, frame_shift_s: float):
    length = int(round(frame_length_s * sample_rate))
    shift = int(round(frame_shift_s * sample_rate))
    if shift <= 0 or length < shift:
        raise FrontendError("need frame_length >= frame_shift > 0")
    return length, shift


def num_frames(num_samples: int, length: int, shift: int) -> int:
    if num_samples < length:
        return 0
    return (num_samples - length) // shift + 1


def frame_signal(w: Waveform, frame_length_s: float = 0.025, frame_shift_s: float = 0.010) -> np.ndarray:
    """(num_frames, frame_samples) view; the partial tail is dropped."""
    length, shift = frame_samples(w.sample_rate, frame_length_s, frame_shift_s)
    n = num_frames(len(w), length, shift)
    if n == 0:
        raise FrontendError("utterance too short")
    idx = np.arange(length)[None, :] + shift * np.arange(n)[:, None]
    return w.samples[idx]


def hamming(n: int) -> np.ndarray:
    """Symmetric Hamming window."""
    if n == 1:
        return np.ones(1)
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2 * np.pi * k / (n - 1))


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def filter_centers(num_filters: int, low: float, high: float) -> np.ndarray:
    mels = np.linspace(hz_to_mel(low), hz_to_mel(high), num_filters + 2)
    return mel_to_hz(mels)[1:-1]


@lru_cache(maxsize=16)
def mel_filterbank(num_filters: int, nfft: int, sample_rate: int, low: float, high: float) -> np.ndarray:
    """(num_filters, nfft//2 + 1) triangular weights with unit peak."""
    edges = mel_to_hz(np.linspace(hz_to_mel(low), hz_to_mel(high), num_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    fb = np.zeros((num_filters, len(freqs)))
    for m in range(num_filters):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall))
    fb.setflags(write=False)
    return fb


def extract_features(w: Waveform, config: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """T x num_filters log filterbank energies."""
    emph = preemphasize(w, config.preemphasis)
    frames = frame_signal(emph, config.frame_length, config.frame_shift)
    n = frames.shape[1]
    nfft = next_pow2(n)
    spec = np.abs(np.fft.rfft(frames * hamming(n), nfft)) ** 2
    high = config.high_freq if config.high_freq is not None else w.sample_rate / 2
    fb = mel_filterbank(config.num_filters, nfft, w.sample_rate, float(config.low_freq), float(high))
    feats = np.log(np.maximum(spec @ fb.T, config.floor))
    if config.normalize:
        feats = (feats - feats.mean(axis=0)) / (feats.std(axis=0) + 1e-8)
    return feats


# -- WAV I/O --------------------------------------------------------------------


def read_wav(path: Union[str, Path], expected_rate: Optional[int] = DEFAULT_RATE) -> Waveform:
    """Read 16-bit PCM mono WAV, scaled to [-1, 1)."""
    with wave.open(str(path), "rb") as f:
        if f.getsampwidth() != 2:
            raise FrontendError(f"{path}: only 16-bit PCM is supported")
        if f.getnchannels() != 1:
            raise FrontendError(f"{path}: expected mono audio")
        rate = f.getframerate()
        raw = f.readframes(f.getnframes())
    if expected_rate is not None and rate != expected_rate:
        raise FrontendError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz (no resampling)")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path: Union[str, Path], w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(w.sample_rate))
        f.writeframes(pcm.tobytes())
