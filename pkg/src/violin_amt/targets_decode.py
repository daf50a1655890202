"""Frame-wise regression targets and sub-frame note decoding.

Onsets and offsets are encoded as triangles ``max(0, 1 - |t - t*| / w)``
sampled at the frame times ``t_i = i / frame_rate``. Let ``h`` be the frame
period, ``i`` the frame nearest the event and ``t* = t_i + d`` with
``|d| <= h/2``. If all three frames ``i-1, i, i+1`` lie inside the triangle
(``w >= 1.5 h``), their values are, for amplitude ``a``::

    A = a (1 - (h + d) / w)
    B = a (1 - |d| / w)
    C = a (1 - (h - d) / w)

so ``C - A = 2 a d / w``. For ``d >= 0`` (equivalently ``C >= A``),
``B - A = a h / w`` and ``d = h (C - A) / (2 (B - A))``. For ``d < 0``,
``B - C = a h / w`` and ``d = h (C - A) / (2 (B - C))``. Both ratios cancel
``a``, which is why :func:`refine_peak` is scale invariant and recovers the
event time exactly from an ideal target.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .notes import NoteEvent, NoteList

__all__ = [
    "NoteEvent",
    "NoteList",
    "FrameHeads",
    "DecodeConfig",
    "PitchOutOfRange",
    "encode_targets",
    "refine_peak",
    "decode_notes",
]

HEAD_NAMES = ("onset", "offset", "frame", "velocity")


class PitchOutOfRange(ValueError):
    def __init__(self, notes):
        self.notes = list(notes)
        super().__init__(f"{len(self.notes)} note(s) outside the pitch-bin range: {self.notes}")


@dataclass(frozen=True)
class DecodeConfig:
    onset_threshold: float = 0.3
    offset_threshold: float = 0.3
    frame_threshold: float = 0.1
    min_duration_s: float = 0.03
    target_halfwidth_s: float = 0.05

    def __post_init__(self):
        for name in ("onset_threshold", "offset_threshold", "frame_threshold"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.min_duration_s < 0:
            raise ValueError("min_duration_s must be non-negative")
        if self.target_halfwidth_s <= 0:
            raise ValueError("target_halfwidth_s must be positive")


@dataclass(frozen=True, eq=False)
class FrameHeads:
    """The four T x P activations shared by targets and model outputs."""

    onset: np.ndarray
    offset: np.ndarray
    frame: np.ndarray
    velocity: np.ndarray
    frame_rate: float = 100.0
    pitch_lo: int = 21

    def __post_init__(self):
        shape = np.shape(self.onset)
        if len(shape) != 2:
            raise ValueError("heads must be 2-D (frames x pitches)")
        for name in HEAD_NAMES:
            arr = getattr(self, name)
            if np.shape(arr) != shape:
                raise ValueError(f"head {name!r} has shape {np.shape(arr)}, expected {shape}")
            if arr.size and (np.min(arr) < 0.0 or np.max(arr) > 1.0):
                raise ValueError(f"head {name!r} has values outside [0, 1]")

    @property
    def n_frames(self) -> int:
        return self.onset.shape[0]

    @property
    def n_pitches(self) -> int:
        return self.onset.shape[1]

    def as_tuple(self):
        return tuple(getattr(self, name) for name in HEAD_NAMES)


def _triangle(column: np.ndarray, t_event: float, w: float, frame_rate: float, scale=1.0):
    """Max-combine one triangle into ``column``; returns (first frame, values) or None."""
    T = column.shape[0]
    lo = max(0, int(np.ceil((t_event - w) * frame_rate)))
    hi = min(T - 1, int(np.floor((t_event + w) * frame_rate)))
    if hi < lo:
        return None
    idx = np.arange(lo, hi + 1)
    vals = scale * np.maximum(0.0, 1.0 - np.abs(idx / frame_rate - t_event) / w)
    np.maximum(column[lo:hi + 1], vals, out=column[lo:hi + 1])
    return lo, vals


def encode_targets(notes: NoteList, T: int, cfg: DecodeConfig = DecodeConfig(),
                   frame_rate: float = 100.0, pitch_lo: int = 21, P: int = 88) -> FrameHeads:
    """Render a note list as onset/offset triangles, a piano roll and velocities."""
    bad = [n for n in notes if not pitch_lo <= int(round(n.pitch_midi)) <= pitch_lo + P - 1]
    if bad:
        raise PitchOutOfRange(bad)
    w = cfg.target_halfwidth_s
    onset = np.zeros((T, P))
    offset = np.zeros((T, P))
    frame = np.zeros((T, P))
    velocity = np.zeros((T, P))
    times = np.arange(T) / frame_rate
    for n in notes:
        p = int(round(n.pitch_midi)) - pitch_lo
        touched = _triangle(onset[:, p], n.onset_s, w, frame_rate)
        if touched is not None:
            lo, vals = touched
            support = lo + np.flatnonzero(vals > 0)
            velocity[support, p] = np.maximum(velocity[support, p], n.velocity)
        _triangle(offset[:, p], n.offset_s, w, frame_rate)
        active = (times >= n.onset_s) & (times < n.offset_s)
        frame[active, p] = 1.0
    return FrameHeads(onset, offset, frame, velocity, frame_rate, pitch_lo)


def refine_peak(A: float, B: float, C: float, h: float) -> float:
    """Sub-frame offset of a triangular peak from three neighbouring frames."""
    if C >= A:
        den = B - A
    else:
        den = B - C
    if den <= 1e-9:
        return 0.0
    delta = h * (C - A) / (2.0 * den)
    return float(min(max(delta, -h / 2.0), h / 2.0))


def _peaks(x: np.ndarray, threshold: float):
    # Strict local maxima, plateaus resolved toward the earlier frame;
    # out-of-range neighbours count as 0.
    prev = np.concatenate([[0.0], x[:-1]])
    nxt = np.concatenate([x[1:], [0.0]])
    idx = np.flatnonzero((x >= threshold) & (x > prev) & (x >= nxt))
    return idx, prev, nxt


def _decode_pitch(heads: FrameHeads, p: int, cfg: DecodeConfig):
    h = 1.0 / heads.frame_rate
    T = heads.n_frames
    clip_end = (T - 1) * h
    on = heads.onset[:, p]
    onset_idx, on_prev, on_next = _peaks(on, cfg.onset_threshold)
    if onset_idx.size == 0:
        return []
    off = heads.offset[:, p]
    offset_idx, off_prev, off_next = _peaks(off, cfg.offset_threshold)
    low_frames = np.flatnonzero(heads.frame[:, p] < cfg.frame_threshold)

    # Candidates that survive the duration filter before onset-onset truncation.
    kept = []
    for i in onset_idx:
        t_on = i * h + refine_peak(on_prev[i], on[i], on_next[i], h)
        end = clip_end
        k = np.searchsorted(offset_idx, i, side="right")
        if k < offset_idx.size:
            j = offset_idx[k]
            end = min(end, j * h + refine_peak(off_prev[j], off[j], off_next[j], h))
        k = np.searchsorted(low_frames, i, side="right")
        if k < low_frames.size:
            end = min(end, low_frames[k] * h)
        if end - t_on >= cfg.min_duration_s:
            kept.append((t_on, end, i))

    # Greedy earliest-first selection keeps onsets at least min_duration apart;
    # this is the largest such subset, so the note count is monotone in the threshold.
    accepted = []
    for cand in kept:
        if not accepted or cand[0] - accepted[-1][0] >= cfg.min_duration_s:
            accepted.append(cand)

    pitch = float(heads.pitch_lo + p)
    notes = []
    for k, (t_on, end, i) in enumerate(accepted):
        if k + 1 < len(accepted):
            end = min(end, accepted[k + 1][0])
        vel = float(np.clip(heads.velocity[i, p], 0.0, 1.0))
        if end > t_on:
            notes.append(NoteEvent(max(0.0, t_on), end, pitch, vel))
    return notes


def decode_notes(heads: FrameHeads, cfg: DecodeConfig = DecodeConfig()) -> NoteList:
    """Decode onset/offset/frame/velocity activations into notes.

    Per pitch, onsets are thresholded local maxima of the onset head with
    sub-frame refinement. A note ends at the earliest of the next refined
    offset peak, the first frame whose frame activation drops below
    threshold, the next accepted onset on that pitch, or the clip end.
    Onset candidates closer than ``min_duration_s`` to an earlier accepted
    onset on the same pitch are dropped.
    """
    notes = []
    for p in range(heads.n_pitches):
        notes.extend(_decode_pitch(heads, p, cfg))
    return NoteList(notes)
