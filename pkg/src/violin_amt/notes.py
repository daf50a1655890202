"""Note events and sorted note lists."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

__all__ = ["NoteEvent", "NoteList"]


@dataclass(frozen=True, order=False)
class NoteEvent:
    onset_s: float
    offset_s: float
    pitch_midi: float
    velocity: float = 0.8

    def __post_init__(self):
        for name in ("onset_s", "offset_s", "pitch_midi", "velocity"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if not self.offset_s > self.onset_s:
            raise ValueError(f"offset_s ({self.offset_s}) must exceed onset_s ({self.onset_s})")
        if not 0.0 <= self.pitch_midi <= 127.0:
            raise ValueError(f"pitch_midi {self.pitch_midi} outside [0, 127]")
        if not 0.0 <= self.velocity <= 1.0:
            raise ValueError(f"velocity {self.velocity} outside [0, 1]")

    @property
    def duration(self) -> float:
        return self.offset_s - self.onset_s


class NoteList:
    """Immutable sequence of notes kept sorted by onset, ties by pitch."""

    __slots__ = ("_notes",)

    def __init__(self, notes: Iterable[NoteEvent] = ()):
        notes = list(notes)
        for n in notes:
            if not isinstance(n, NoteEvent):
                raise TypeError(f"expected NoteEvent, got {type(n).__name__}")
        self._notes = tuple(sorted(notes, key=lambda n: (n.onset_s, n.pitch_midi)))

    @classmethod
    def from_arrays(cls, onsets, offsets, pitches, velocities=None) -> "NoteList":
        if velocities is None:
            velocities = np.full(len(onsets), 0.8)
        return cls(NoteEvent(a, b, p, v) for a, b, p, v in zip(onsets, offsets, pitches, velocities))

    def __len__(self) -> int:
        return len(self._notes)

    def __iter__(self) -> Iterator[NoteEvent]:
        return iter(self._notes)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return NoteList(self._notes[i])
        return self._notes[i]

    def __eq__(self, other):
        if not isinstance(other, NoteList):
            return NotImplemented
        return self._notes == other._notes

    def __hash__(self):
        return hash(self._notes)

    def __repr__(self):
        return f"NoteList({list(self._notes)!r})"

    @property
    def onsets(self) -> np.ndarray:
        return np.array([n.onset_s for n in self._notes], dtype=np.float64)

    @property
    def offsets(self) -> np.ndarray:
        return np.array([n.offset_s for n in self._notes], dtype=np.float64)

    @property
    def pitches(self) -> np.ndarray:
        return np.array([n.pitch_midi for n in self._notes], dtype=np.float64)

    @property
    def velocities(self) -> np.ndarray:
        return np.array([n.velocity for n in self._notes], dtype=np.float64)
