"""Log-mel spectrogram front end."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import SAMPLE_RATE, AudioClip
from .exceptions import DataError

FMX_MAGIC = b"FMX1"


@dataclass(frozen=True)
class FrameConfig:
    win_length: int = 400
    hop_length: int = 160
    n_fft: int = 512
    window: str = "hann"
    n_mels: int = 64
    f_min: float = 0.0
    f_max: float = SAMPLE_RATE / 2
    log_epsilon: float = 1e-10

    def __post_init__(self):
        if not 0 < self.hop_length <= self.win_length <= self.n_fft:
            raise ValueError("require 0 < hop_length <= win_length <= n_fft")
        if self.n_fft & (self.n_fft - 1):
            raise ValueError(f"n_fft must be a power of two, got {self.n_fft}")
        if self.window not in ("hann", "rectangular"):
            raise ValueError(f"unknown window {self.window!r}")
        if self.n_mels < 1:
            raise ValueError("n_mels must be positive")
        if not 0 <= self.f_min < self.f_max:
            raise ValueError("require 0 <= f_min < f_max")
        if not self.log_epsilon > 0:
            raise ValueError("log_epsilon must be positive")

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.win_length) // self.hop_length

    def window_array(self) -> np.ndarray:
        if self.window == "rectangular":
            return np.ones(self.win_length)
        n = np.arange(self.win_length)
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / self.win_length)


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    config: FrameConfig = field(default_factory=FrameConfig)

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ValueError("frequency must be non-negative")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


def stft_magnitude(clip: AudioClip, cfg: FrameConfig) -> np.ndarray:
    """One-sided DFT magnitudes, shape (n_fft // 2 + 1, n_frames).

    Frames are not centred: frame ``t`` covers samples
    ``[t * hop, t * hop + win)``.
    """
    x = clip.samples
    if x.shape[0] < cfg.win_length:
        raise DataError(
            f"clip of {x.shape[0]} samples is shorter than one window ({cfg.win_length})"
        )
    frames = sliding_window_view(x, cfg.win_length)[:: cfg.hop_length]
    spec = np.fft.rfft(frames * cfg.window_array(), n=cfg.n_fft, axis=1)
    return np.abs(spec).T


@dataclass(frozen=True)
class FilterBank:
    weights: np.ndarray
    center_hz: np.ndarray


def mel_filterbank(cfg: FrameConfig, sample_rate: int = SAMPLE_RATE) -> FilterBank:
    """Triangular filters with centres evenly spaced on the mel axis."""
    if cfg.f_max > sample_rate / 2:
        raise ValueError(f"f_max {cfg.f_max} exceeds Nyquist {sample_rate / 2}")
    edges = mel_to_hz(
        np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2)
    )
    edges[0], edges[-1] = cfg.f_min, cfg.f_max
    bin_hz = np.arange(cfg.n_fft // 2 + 1) * sample_rate / cfg.n_fft
    centers = edges[1:-1]
    center_bins = np.rint(centers * cfg.n_fft / sample_rate).astype(int)
    if np.any(np.diff(center_bins) == 0):
        raise ValueError(
            f"n_mels={cfg.n_mels} is too large: two filter centres share an FFT bin"
        )
    lower, upper = edges[:-2, None], edges[2:, None]
    rising = (bin_hz - lower) / (centers[:, None] - lower)
    falling = (upper - bin_hz) / (upper - centers[:, None])
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(weights.max(axis=1) <= 0)
    if empty.size:
        raise ValueError(f"mel filter {int(empty[0])} covers no FFT bin; reduce n_mels")
    return FilterBank(weights, centers)


def log_mel(clip: AudioClip, cfg: FrameConfig, filterbank: FilterBank = None) -> FeatureMatrix:
    if filterbank is None:
        filterbank = mel_filterbank(cfg, clip.sample_rate)
    power = stft_magnitude(clip, cfg) ** 2
    return FeatureMatrix(np.log(filterbank.weights @ power + cfg.log_epsilon), cfg)


def normalize(features: FeatureMatrix) -> FeatureMatrix:
    """Per-row standardization; rows with std below 1e-8 are only centred."""
    values = features.values
    if values.shape[1] < 1:
        raise DataError("cannot normalize a feature matrix with no frames")
    mean = values.mean(axis=1, keepdims=True)
    std = values.std(axis=1, keepdims=True)
    std = np.where(std < 1e-8, 1.0, std)
    return replace(features, values=(values - mean) / std)


def write_features(features, path) -> None:
    """Write the FMX1 binary layout: magic, u32 n_mels, u32 n_frames, f32 rows."""
    values = np.asarray(getattr(features, "values", features))
    with open(path, "wb") as fh:
        fh.write(FMX_MAGIC + struct.pack("<II", *values.shape))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FMX_MAGIC or len(blob) < 12:
        raise DataError(f"{path}: not an FMX1 feature file")
    n_mels, n_frames = struct.unpack("<II", blob[4:12])
    body = blob[12:]
    if len(body) != 4 * n_mels * n_frames:
        raise DataError(f"{path}: feature payload has wrong size")
    return np.frombuffer(body, dtype="<f4").reshape(n_mels, n_frames).astype(np.float64)
