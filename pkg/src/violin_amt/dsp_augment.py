"""Randomized audio augmentation chain.

Stages run in a fixed order: pitch shift (by resampling, with note labels
rescaled to stay aligned), fixed gain boost, two independently drawn RBJ
band-pass biquads in series, and a mono Freeverb-style reverberator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .audio_io import AudioClip, sinc_interpolate
from .notes import NoteEvent, NoteList

__all__ = [
    "AugmentConfig",
    "ChainParams",
    "BiquadCoeffs",
    "DomainError",
    "sample_chain_params",
    "apply_gain_db",
    "biquad_bandpass_coeffs",
    "apply_biquad",
    "pitch_shift_resample",
    "reverb_freeverb",
    "apply_chain",
]

# Freeverb tunings at 44.1 kHz.
COMB_DELAYS_44K = (1116, 1188, 1277, 1356, 1422, 1491, 1557, 1617)
ALLPASS_DELAYS_44K = (556, 441, 341, 225)
ALLPASS_FEEDBACK = 0.5
FIXED_INPUT_GAIN = 0.015
WET_SCALE = 3.0
ROOM_SCALE = 0.28
ROOM_OFFSET = 0.7
DAMP_SCALE = 0.4


class DomainError(ValueError):
    pass


def _interval(value, name):
    lo, hi = (float(v) for v in value)
    if lo > hi:
        raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
    return (lo, hi)


@dataclass(frozen=True)
class AugmentConfig:
    pitch_range_semitones: tuple = (-0.1, 0.1)
    gain_db: float = 5.0
    bp_fc_range_hz: tuple = (32.0, 4096.0)
    bp_q_range: tuple = (0.5, 4.0)
    reverb_room_size: float = 0.35
    reverb_damping: float = 0.5
    reverb_wet: float = 0.33
    reverb_dry: float = 0.7

    def __post_init__(self):
        object.__setattr__(self, "pitch_range_semitones",
                           _interval(self.pitch_range_semitones, "pitch_range_semitones"))
        object.__setattr__(self, "bp_fc_range_hz", _interval(self.bp_fc_range_hz, "bp_fc_range_hz"))
        object.__setattr__(self, "bp_q_range", _interval(self.bp_q_range, "bp_q_range"))
        if self.bp_fc_range_hz[0] <= 0:
            raise ValueError("bp_fc_range_hz must be positive")
        if self.bp_q_range[0] <= 0:
            raise ValueError("bp_q_range must be positive")
        for name in ("reverb_room_size", "reverb_damping"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass(frozen=True)
class ChainParams:
    pitch_semitones: float
    gain_db: float
    bp1_fc: float
    bp1_q: float
    bp2_fc: float
    bp2_q: float
    reverb_room_size: float
    reverb_damping: float
    reverb_wet: float
    reverb_dry: float
    seed: int = field(default=0)


@dataclass(frozen=True)
class BiquadCoeffs:
    b0: float
    b1: float
    b2: float
    a1: float
    a2: float

    @property
    def b(self):
        return np.array([self.b0, self.b1, self.b2])

    @property
    def a(self):
        return np.array([1.0, self.a1, self.a2])

    def response(self, freq_hz, sr) -> np.ndarray:
        """Complex transfer function evaluated on the unit circle."""
        z1 = np.exp(-1j * 2.0 * np.pi * np.asarray(freq_hz, dtype=np.float64) / sr)
        num = self.b0 + self.b1 * z1 + self.b2 * z1 * z1
        den = 1.0 + self.a1 * z1 + self.a2 * z1 * z1
        return num / den


def sample_chain_params(rng, cfg: AugmentConfig = AugmentConfig()) -> ChainParams:
    """Draw one realization of the effects chain.

    ``rng`` is either an integer seed or a ``numpy.random.Generator``. A
    generator first yields a 63-bit seed that is stored in the result, so
    every ``ChainParams`` can be regenerated from its own ``seed`` field.
    """
    if isinstance(rng, np.random.Generator):
        seed = int(rng.integers(0, 2**63 - 1))
    else:
        seed = int(rng)
    g = np.random.default_rng(seed)
    pitch = float(g.uniform(*cfg.pitch_range_semitones))
    fc1, fc2 = (float(v) for v in g.uniform(*cfg.bp_fc_range_hz, size=2))
    q1, q2 = (float(v) for v in g.uniform(*cfg.bp_q_range, size=2))
    return ChainParams(
        pitch_semitones=pitch,
        gain_db=cfg.gain_db,
        bp1_fc=fc1,
        bp1_q=q1,
        bp2_fc=fc2,
        bp2_q=q2,
        reverb_room_size=cfg.reverb_room_size,
        reverb_damping=cfg.reverb_damping,
        reverb_wet=cfg.reverb_wet,
        reverb_dry=cfg.reverb_dry,
        seed=seed,
    )


def apply_gain_db(clip: AudioClip, g: float) -> AudioClip:
    if not math.isfinite(g):
        raise ValueError("gain must be finite")
    return clip.with_samples(clip.samples * 10.0 ** (g / 20.0))


def biquad_bandpass_coeffs(fc: float, q: float, sr: float) -> BiquadCoeffs:
    """RBJ cookbook band-pass with constant 0 dB peak gain."""
    if not 0.0 < fc < sr / 2.0:
        raise DomainError(f"fc={fc} Hz outside (0, {sr / 2.0}) Hz")
    if not q > 0:
        raise DomainError(f"q must be positive, got {q}")
    w0 = 2.0 * math.pi * fc / sr
    alpha = math.sin(w0) / (2.0 * q)
    a0 = 1.0 + alpha
    return BiquadCoeffs(alpha / a0, 0.0, -alpha / a0, -2.0 * math.cos(w0) / a0, (1.0 - alpha) / a0)


def apply_biquad(clip: AudioClip, c: BiquadCoeffs) -> AudioClip:
    # lfilter runs the transposed direct-form II recursion from zero state.
    return clip.with_samples(lfilter(c.b, c.a, clip.samples))


def pitch_shift_resample(clip: AudioClip, s: float, notes: NoteList | None = None):
    """Shift pitch by ``s`` semitones by reading the clip at rate ``2**(s/12)``.

    Duration shrinks by the same factor, so note times are divided by the
    rate and note pitches move by ``s``. Returns ``(clip, notes)``; the
    second element is None when no notes were given.
    """
    if abs(s) > 1.0:
        raise ValueError(f"pitch shift {s} semitones exceeds the 1-semitone guard")
    if s == 0:
        return clip.with_samples(clip.samples.copy()), notes
    r = 2.0 ** (s / 12.0)
    n_out = int(round(len(clip) / r))
    positions = np.arange(n_out, dtype=np.float64) * r
    shifted = clip.with_samples(sinc_interpolate(clip.samples, positions, min(1.0, 1.0 / r)))
    if notes is None:
        return shifted, None
    moved = NoteList(
        NoteEvent(n.onset_s / r, n.offset_s / r, min(127.0, max(0.0, n.pitch_midi + s)), n.velocity)
        for n in notes
    )
    return shifted, moved


def _comb(x: np.ndarray, delay: int, feedback: float, damp: float) -> np.ndarray:
    # Lowpass-damped feedback comb, evaluated one delay-length block at a time:
    # each block's output is the previous block's delay-line input.
    n = x.shape[0]
    w = np.zeros(n + delay)
    out = np.zeros(n)
    store = 0.0
    for start in range(0, n, delay):
        stop = min(start + delay, n)
        blk = w[start:start + (stop - start)]
        y, _ = lfilter([1.0 - damp], [1.0, -damp], blk, zi=[damp * store])
        out[start:stop] = blk
        store = y[-1]
        w[start + delay:stop + delay] = x[start:stop] + feedback * y
    return out


def _allpass(x: np.ndarray, delay: int, g: float) -> np.ndarray:
    n = x.shape[0]
    buf = np.zeros(n + delay)
    out = np.empty(n)
    for start in range(0, n, delay):
        stop = min(start + delay, n)
        prev = buf[start:stop]
        out[start:stop] = prev - x[start:stop]
        buf[start + delay:stop + delay] = x[start:stop] + g * prev
    return out


def freeverb_delays(sr: int):
    scale = sr / 44100.0
    combs = tuple(max(1, int(round(d * scale))) for d in COMB_DELAYS_44K)
    allpasses = tuple(max(1, int(round(d * scale))) for d in ALLPASS_DELAYS_44K)
    return combs, allpasses


def reverb_freeverb(clip: AudioClip, room_size: float = 0.35, damping: float = 0.5,
                    wet: float = 0.33, dry: float = 0.7) -> AudioClip:
    """Mono Freeverb: 8 parallel damped combs into 4 series all-passes.

    The wet path keeps Freeverb's fixed input gain (0.015) and wet scale (3),
    so ``wet`` and ``dry`` are directly comparable levels. The tail past the
    input length is dropped.
    """
    if not 0.0 <= room_size <= 1.0 or not 0.0 <= damping <= 1.0:
        raise ValueError("room_size and damping must lie in [0, 1]")
    x = clip.samples
    if wet == 0.0:
        return clip.with_samples(dry * x)
    feedback = ROOM_SCALE * room_size + ROOM_OFFSET
    damp = DAMP_SCALE * damping
    combs, allpasses = freeverb_delays(clip.sample_rate)
    driven = FIXED_INPUT_GAIN * x
    acc = np.zeros_like(x)
    for d in combs:
        acc += _comb(driven, d, feedback, damp)
    for d in allpasses:
        acc = _allpass(acc, d, ALLPASS_FEEDBACK)
    return clip.with_samples(dry * x + wet * WET_SCALE * acc)


def apply_chain(clip: AudioClip, notes: NoteList, p: ChainParams):
    """Run the full chain; only the pitch-shift stage touches the notes."""
    sr = clip.sample_rate
    bp1 = biquad_bandpass_coeffs(p.bp1_fc, p.bp1_q, sr)
    bp2 = biquad_bandpass_coeffs(p.bp2_fc, p.bp2_q, sr)
    out, notes_out = pitch_shift_resample(clip, p.pitch_semitones, notes)
    out = apply_gain_db(out, p.gain_db)
    out = apply_biquad(out, bp1)
    out = apply_biquad(out, bp2)
    out = reverb_freeverb(out, p.reverb_room_size, p.reverb_damping, p.reverb_wet, p.reverb_dry)
    return out, notes_out
