"""Power spectrogram and log-mel front-end.

Frame ``i`` is centred on sample ``i * hop`` (time ``i * hop / sr``); the
target encoder and the note decoder rely on the same convention.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .audio_io import AudioClip

__all__ = [
    "FeatureConfig",
    "FeatureMatrix",
    "SampleRateMismatch",
    "FmatError",
    "hann_window",
    "hz_to_mel",
    "mel_to_hz",
    "mel_band_edges",
    "mel_filter_response",
    "mel_filterbank",
    "stft_power",
    "log_mel",
    "save_fmat",
    "load_fmat",
]

FMAT_MAGIC = b"FMAT"

# Slaney mel scale: linear below 1 kHz, logarithmic above.
_F_SP = 200.0 / 3.0
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = 15.0
_LOGSTEP = np.log(6.4) / 27.0


class SampleRateMismatch(ValueError):
    pass


class FmatError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    sr: int = 16000
    n_fft: int = 2048
    win_length: int = 2048
    hop: int = 160
    n_mels: int = 229
    fmin: float = 30.0
    fmax: float = 8000.0
    amin: float = 1e-10

    def __post_init__(self):
        if not self.hop <= self.win_length <= self.n_fft:
            raise ValueError("require hop <= win_length <= n_fft")
        if self.hop < 1:
            raise ValueError("hop must be positive")
        if not 0.0 <= self.fmin < self.fmax <= self.sr / 2.0:
            raise ValueError("require 0 <= fmin < fmax <= sr/2")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not self.amin > 0:
            raise ValueError("amin must be positive")

    @property
    def frame_rate(self) -> float:
        return self.sr / self.hop

    def n_frames(self, n_samples: int) -> int:
        return n_samples // self.hop + 1


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    data: np.ndarray
    frame_rate: float
    kind: str = "log_mel"

    def __post_init__(self):
        if self.kind not in ("power_spectrogram", "log_mel"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if np.ndim(self.data) != 2:
            raise ValueError("feature data must be a 2-D (frames x bins) matrix")

    @property
    def shape(self):
        return self.data.shape


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window; its samples sum to exactly ``n / 2``."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    linear = f / _F_SP
    log = _MIN_LOG_MEL + np.log(np.maximum(f, 1e-300) / _MIN_LOG_HZ) / _LOGSTEP
    out = np.where(f >= _MIN_LOG_HZ, log, linear)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    linear = _F_SP * m
    log = _MIN_LOG_HZ * np.exp(_LOGSTEP * (m - _MIN_LOG_MEL))
    out = np.where(m >= _MIN_LOG_MEL, log, linear)
    return float(out) if out.ndim == 0 else out


def mel_band_edges(cfg: FeatureConfig) -> np.ndarray:
    """``n_mels + 2`` band edges in Hz, equally spaced on the mel axis."""
    mels = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(mels)


def mel_filter_response(freqs_hz, cfg: FeatureConfig) -> np.ndarray:
    """Area-normalized triangular filter weights at arbitrary frequencies."""
    f = np.asarray(freqs_hz, dtype=np.float64)
    edges = mel_band_edges(cfg)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (f[None, :] - lo) / (mid - lo)
    falling = (hi - f[None, :]) / (hi - mid)
    tri = np.maximum(0.0, np.minimum(rising, falling))
    return tri * (2.0 / (hi - lo))


@lru_cache(maxsize=16)
def _cached_filterbank(cfg: FeatureConfig) -> np.ndarray:
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sr / cfg.n_fft
    fb = mel_filter_response(freqs, cfg)
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """``n_mels x (n_fft/2 + 1)`` Slaney-style filterbank."""
    return _cached_filterbank(cfg)


def _window(cfg: FeatureConfig) -> np.ndarray:
    w = np.zeros(cfg.n_fft)
    left = (cfg.n_fft - cfg.win_length) // 2
    w[left:left + cfg.win_length] = hann_window(cfg.win_length)
    return w


def stft_power(clip: AudioClip, cfg: FeatureConfig = FeatureConfig(), chunk: int = 2048) -> FeatureMatrix:
    """Centred, reflect-padded Hann STFT as magnitude-squared bins."""
    if clip.sample_rate != cfg.sr:
        raise SampleRateMismatch(f"clip is {clip.sample_rate} Hz, config expects {cfg.sr} Hz")
    x = clip.samples
    pad = cfg.n_fft // 2
    n_frames = cfg.n_frames(len(x))
    if len(x) > 1:
        padded = np.pad(x, pad, mode="reflect")
    else:
        padded = np.pad(x, pad, mode="constant")
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.n_fft)[::cfg.hop][:n_frames]
    window = _window(cfg)
    out = np.empty((n_frames, cfg.n_fft // 2 + 1))
    for start in range(0, n_frames, chunk):
        spec = np.fft.rfft(frames[start:start + chunk] * window, axis=1)
        out[start:start + chunk] = spec.real ** 2 + spec.imag ** 2
    return FeatureMatrix(out, cfg.frame_rate, "power_spectrogram")


def log_mel(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    power = stft_power(clip, cfg).data
    mel = power @ mel_filterbank(cfg).T
    return FeatureMatrix(10.0 * np.log10(np.maximum(mel, cfg.amin)), cfg.frame_rate, "log_mel")


def save_fmat(feats, path) -> None:
    """Write a feature matrix as ``FMAT`` + u32 rows + u32 cols + float32 data."""
    data = feats.data if isinstance(feats, FeatureMatrix) else np.asarray(feats)
    rows, cols = data.shape
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    Path(path).write_bytes(FMAT_MAGIC + struct.pack("<II", rows, cols) + payload)


def load_fmat(path, frame_rate: float = FeatureConfig().frame_rate, kind: str = "log_mel") -> FeatureMatrix:
    raw = Path(path).read_bytes()
    if raw[:4] != FMAT_MAGIC:
        raise FmatError("bad magic, expected b'FMAT'")
    if len(raw) < 12:
        raise FmatError("truncated FMAT header")
    rows, cols = struct.unpack_from("<II", raw, 4)
    expected = 12 + 4 * rows * cols
    if len(raw) != expected:
        raise FmatError(f"FMAT payload size {len(raw)} != expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(rows, cols).astype(np.float32)
    return FeatureMatrix(data, frame_rate, kind)
