"""WAV file I/O, mono mixdown and band-limited resampling."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "AudioClip",
    "AudioFormatError",
    "MalformedHeader",
    "UnsupportedEncoding",
    "read_wav",
    "write_wav",
    "resample",
    "sinc_interpolate",
]

_WAVE_FORMAT_PCM = 0x0001
_WAVE_FORMAT_IEEE_FLOAT = 0x0003
_WAVE_FORMAT_EXTENSIBLE = 0xFFFE

# Zero crossings of the interpolation kernel on each side of the output instant.
HALF_TAPS = 16


class AudioFormatError(ValueError):
    pass


class MalformedHeader(AudioFormatError):
    pass


class UnsupportedEncoding(AudioFormatError):
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono sample buffer with its sample rate.

    ``samples`` is stored as a 1-D float64 array.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples) -> "AudioClip":
        return AudioClip(samples, self.sample_rate)


def _parse_chunks(data: bytes):
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeader("not a RIFF/WAVE file")
    chunks = {}
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if cid == b"data" and len(body) < size:
            # Tolerate writers that leave a stale size on truncated files.
            size = len(body)
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    if b"fmt " not in chunks:
        raise MalformedHeader("missing fmt chunk")
    if b"data" not in chunks:
        raise MalformedHeader("missing data chunk")
    return chunks


def read_wav(path, target_sr: int | None = None) -> AudioClip:
    """Read a PCM or float WAV file as a mono clip.

    Stereo is mixed down by the per-sample channel mean. Integer PCM is
    scaled by ``1 / 2**(bits - 1)``. When ``target_sr`` differs from the
    file rate the result is resampled.
    """
    data = Path(path).read_bytes()
    chunks = _parse_chunks(data)
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise MalformedHeader("fmt chunk too short")
    code, channels, sr, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if code == _WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise MalformedHeader("extensible fmt chunk too short")
        (code,) = struct.unpack_from("<H", fmt, 24)
    if channels not in (1, 2):
        raise UnsupportedEncoding(f"{channels} channels (only mono or stereo supported)")
    if sr <= 0:
        raise MalformedHeader(f"invalid sample rate {sr}")

    raw = chunks[b"data"]
    if code == _WAVE_FORMAT_PCM and bits in (16, 24, 32):
        width = bits // 8
        n_frames = len(raw) // (width * channels)
        raw = raw[:n_frames * width * channels]
        if bits == 16:
            ints = np.frombuffer(raw, dtype="<i2").astype(np.float64)
        elif bits == 32:
            ints = np.frombuffer(raw, dtype="<i4").astype(np.float64)
        else:
            b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
            ints = (b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)).astype(np.int32)
            ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints).astype(np.float64)
        x = ints / float(1 << (bits - 1))
    elif code == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        n_frames = len(raw) // (4 * channels)
        x = np.frombuffer(raw[:n_frames * 4 * channels], dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedEncoding(f"format code {code:#06x} with {bits} bits")

    if channels == 2:
        x = x.reshape(-1, 2).mean(axis=1)
    clip = AudioClip(x, sr)
    if target_sr is not None and target_sr != sr:
        clip = resample(clip, target_sr)
    return clip


def write_wav(clip: AudioClip, path) -> None:
    """Write ``clip`` as 16-bit little-endian mono PCM.

    Samples are clamped to ``[-1, 1 - 1/32768]`` before quantization.
    """
    x = np.clip(clip.samples, -1.0, 1.0 - 1.0 / 32768.0)
    pcm = np.round(x * 32768.0).astype("<i2").tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, _WAVE_FORMAT_PCM, 1,
                                    clip.sample_rate, clip.sample_rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(pcm))
    Path(path).write_bytes(header + pcm)


def sinc_interpolate(x: np.ndarray, positions: np.ndarray, cutoff: float,
                     chunk: int = 8192) -> np.ndarray:
    """Evaluate the band-limited reconstruction of ``x`` at fractional indices.

    The kernel is a Hann-windowed sinc with ``cutoff`` relative to the input
    Nyquist (1.0 = no extra lowpass). Its support spans ``HALF_TAPS``
    zero crossings per side; outside ``x`` the signal is taken as zero.
    """
    x = np.asarray(x, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64)
    out = np.empty(positions.shape[0])
    if x.shape[0] == 0:
        out[:] = 0.0
        return out
    half = HALF_TAPS / cutoff
    k = int(np.ceil(half))
    offsets = np.arange(-k + 1, k + 1)
    padded = np.concatenate([np.zeros(k), x, np.zeros(k + 1)])
    for start in range(0, positions.shape[0], chunk):
        pos = positions[start:start + chunk]
        base = np.floor(pos).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        d = pos[:, None] - idx
        window = np.where(np.abs(d) < half, 0.5 * (1.0 + np.cos(np.pi * d / half)), 0.0)
        kernel = cutoff * np.sinc(cutoff * d) * window
        valid = (idx >= 0) & (idx < x.shape[0])
        taps = padded[np.clip(idx + k, 0, padded.shape[0] - 1)] * valid
        out[start:start + chunk] = np.einsum("ij,ij->i", taps, kernel)
    return out


def resample(clip: AudioClip, new_sr: int) -> AudioClip:
    """Resample to ``new_sr`` with windowed-sinc interpolation.

    Output length is ``round(N * new_sr / old_sr)``. When decimating, the
    kernel cutoff drops to the output Nyquist and its support widens so it
    still spans 32 taps at the output rate.
    """
    if int(new_sr) != new_sr or new_sr <= 0:
        raise ValueError(f"new_sr must be a positive integer, got {new_sr}")
    new_sr = int(new_sr)
    old_sr = clip.sample_rate
    if new_sr == old_sr:
        return AudioClip(clip.samples.copy(), old_sr)
    n_out = int(round(len(clip) * new_sr / old_sr))
    positions = np.arange(n_out, dtype=np.float64) * old_sr / new_sr
    cutoff = min(1.0, new_sr / old_sr)
    return AudioClip(sinc_interpolate(clip.samples, positions, cutoff), new_sr)
