"""Note annotation I/O, training segmentation and a synthetic violin-like source."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip, read_wav, write_wav
from .notes import NoteEvent, NoteList

__all__ = [
    "LabeledClip",
    "SynthConfig",
    "ParseError",
    "SchemaError",
    "NonPositiveFrequency",
    "hz_to_midi",
    "midi_to_hz",
    "load_notes_tsv",
    "load_notes",
    "notes_to_dict",
    "save_notes_json",
    "load_notes_json",
    "segment",
    "synth_clip",
    "save_labeled_clip",
    "load_dataset_dir",
]

TSV_DEFAULT_VELOCITY = 0.8
MIN_FRAGMENT_S = 0.03
_NOTE_FIELDS = ("onset_s", "offset_s", "pitch_midi", "velocity")


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(ValueError):
    def __init__(self, message, field=None):
        self.field = field
        super().__init__(message)


class NonPositiveFrequency(ParseError):
    pass


def hz_to_midi(freq_hz: float) -> float:
    return 69.0 + 12.0 * math.log2(freq_hz / 440.0)


def midi_to_hz(pitch: float) -> float:
    return 440.0 * 2.0 ** ((pitch - 69.0) / 12.0)


@dataclass(frozen=True, eq=False)
class LabeledClip:
    id: str
    audio: AudioClip
    notes: NoteList

    def __post_init__(self):
        limit = self.audio.duration + 1e-3
        late = [n for n in self.notes if n.offset_s > limit]
        if late:
            raise ValueError(f"clip {self.id!r}: {len(late)} note(s) end after the audio ({self.audio.duration:.3f} s)")


def load_notes_tsv(path) -> NoteList:
    """Read ``onset_s<TAB>freq_hz<TAB>duration_s`` lines; ``#`` starts a comment line."""
    notes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            cols = text.split("\t")
            if len(cols) != 3:
                raise ParseError(f"expected 3 tab-separated columns, got {len(cols)}", lineno)
            try:
                onset, freq, dur = (float(c) for c in cols)
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if not freq > 0:
                raise NonPositiveFrequency(f"frequency {freq} Hz is not positive", lineno)
            try:
                notes.append(NoteEvent(onset, onset + dur, hz_to_midi(freq), TSV_DEFAULT_VELOCITY))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    return NoteList(notes)


def notes_to_dict(notes: NoteList) -> dict:
    return {"notes": [{name: getattr(n, name) for name in _NOTE_FIELDS} for n in notes]}


def save_notes_json(notes: NoteList, path) -> None:
    Path(path).write_text(json.dumps(notes_to_dict(notes), indent=1) + "\n", encoding="utf-8")


def notes_from_dict(doc) -> NoteList:
    if not isinstance(doc, dict) or "notes" not in doc:
        raise SchemaError("document must be an object with a 'notes' array", "notes")
    if not isinstance(doc["notes"], list):
        raise SchemaError("'notes' must be an array", "notes")
    notes = []
    for k, item in enumerate(doc["notes"]):
        if not isinstance(item, dict):
            raise SchemaError(f"notes[{k}] must be an object")
        values = {}
        for name in _NOTE_FIELDS:
            if name not in item:
                raise SchemaError(f"notes[{k}] is missing field '{name}'", name)
            value = item[name]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SchemaError(f"notes[{k}].{name} must be a number", name)
            values[name] = float(value)
        try:
            notes.append(NoteEvent(**values))
        except ValueError as exc:
            raise SchemaError(f"notes[{k}]: {exc}") from None
    return NoteList(notes)


def load_notes_json(path) -> NoteList:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    return notes_from_dict(doc)


def load_notes(path) -> NoteList:
    """Load a note file, choosing the TSV reader for ``.tsv``/``.txt`` files."""
    if Path(path).suffix.lower() in (".tsv", ".txt"):
        return load_notes_tsv(path)
    return load_notes_json(path)


def segment(clip: LabeledClip, seg_s: float, hop_s: float) -> list:
    """Cut fixed-length windows starting every ``hop_s`` seconds.

    Notes are clipped to each window and re-based to its start; fragments
    shorter than 30 ms are dropped. The last window is zero-padded.
    """
    if seg_s <= 0 or hop_s <= 0:
        raise ValueError("seg_s and hop_s must be positive")
    sr = clip.audio.sample_rate
    x = clip.audio.samples
    seg_n = int(round(seg_s * sr))
    duration = clip.audio.duration
    n_windows = max(1, int(math.ceil(duration / hop_s - 1e-9)))
    out = []
    for k in range(n_windows):
        start_s = k * hop_s
        start = int(round(start_s * sr))
        chunk = x[start:start + seg_n]
        if chunk.shape[0] < seg_n:
            chunk = np.concatenate([chunk, np.zeros(seg_n - chunk.shape[0])])
        end_s = start_s + seg_s
        notes = []
        for n in clip.notes:
            if n.offset_s <= start_s or n.onset_s >= end_s:
                continue
            on = max(n.onset_s, start_s) - start_s
            off = min(n.offset_s, end_s) - start_s
            if off - on >= MIN_FRAGMENT_S:
                notes.append(NoteEvent(on, off, n.pitch_midi, n.velocity))
        out.append(LabeledClip(f"{clip.id}_{k:03d}", AudioClip(chunk, sr), NoteList(notes)))
    return out


@dataclass(frozen=True)
class SynthConfig:
    n_notes_range: tuple = (3, 12)
    pitch_range: tuple = (55, 96)
    duration_range_s: tuple = (0.2, 1.0)
    gap_range_s: tuple = (0.05, 0.3)
    n_harmonics: int = 8
    vibrato_rate_hz: float = 5.5
    vibrato_depth_semitones: float = 0.2
    vibrato_prob: float = 0.5
    attack_s: float = 0.02
    release_s: float = 0.05
    noise_floor_db: float = -60.0
    velocity_range: tuple = (0.4, 1.0)
    amplitude: float = 0.25
    tail_s: float = 0.25
    sample_rate: int = 16000
    seed: int = 0
    id: str = "synth"

    def __post_init__(self):
        for name in ("n_notes_range", "pitch_range", "duration_range_s", "gap_range_s", "velocity_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound exceeds upper bound")
            object.__setattr__(self, name, (lo, hi))
        if self.n_notes_range[0] < 0:
            raise ValueError("n_notes_range must be non-negative")
        if not (0 <= self.pitch_range[0] and self.pitch_range[1] <= 127):
            raise ValueError("pitch_range must lie within MIDI 0..127")
        if self.duration_range_s[0] < self.attack_s:
            raise ValueError("notes must be at least as long as the attack ramp")


def synth_clip(cfg: SynthConfig = SynthConfig()) -> LabeledClip:
    """Render a monophonic additive-harmonic note sequence with exact labels.

    Each note sums harmonics ``k = 1..n_harmonics`` at amplitude ``1/k``
    (harmonics at or above 0.45 * sr are left out), optionally with
    sinusoidal vibrato, under linear attack and release ramps that end at
    the note offset. Onsets and offsets are snapped to sample instants so
    the labels describe the rendered audio exactly.
    """
    rng = np.random.default_rng(cfg.seed)
    sr = cfg.sample_rate
    n_notes = int(rng.integers(cfg.n_notes_range[0], cfg.n_notes_range[1] + 1))
    spans = []
    cursor = int(round(rng.uniform(*cfg.gap_range_s) * sr))
    for _ in range(n_notes):
        n = int(round(rng.uniform(*cfg.duration_range_s) * sr))
        pitch = int(rng.integers(cfg.pitch_range[0], cfg.pitch_range[1] + 1))
        velocity = float(rng.uniform(*cfg.velocity_range))
        vibrato = bool(rng.uniform() < cfg.vibrato_prob)
        vib_phase = float(rng.uniform(0.0, 2.0 * np.pi))
        spans.append((cursor, n, pitch, velocity, vibrato, vib_phase))
        cursor += n + int(round(rng.uniform(*cfg.gap_range_s) * sr))
    total = cursor + int(round(cfg.tail_s * sr))
    if n_notes:
        total = max(total, spans[-1][0] + spans[-1][1] + int(round(cfg.tail_s * sr)))

    audio = np.zeros(total)
    notes = []
    for start, n, pitch, velocity, vibrato, vib_phase in spans:
        t = np.arange(n) / sr
        f0 = midi_to_hz(pitch)
        if vibrato:
            semis = cfg.vibrato_depth_semitones * np.sin(2.0 * np.pi * cfg.vibrato_rate_hz * t + vib_phase)
            freq = f0 * 2.0 ** (semis / 12.0)
            f_peak = f0 * 2.0 ** (cfg.vibrato_depth_semitones / 12.0)
        else:
            freq = np.full(n, f0)
            f_peak = f0
        phase = 2.0 * np.pi * np.concatenate([[0.0], np.cumsum(freq[:-1])]) / sr
        tone = np.zeros(n)
        for k in range(1, cfg.n_harmonics + 1):
            if k * f_peak >= 0.45 * sr:
                break
            tone += np.sin(k * phase) / k
        env = np.minimum.reduce([t / cfg.attack_s, np.ones(n), (n - np.arange(n)) / sr / cfg.release_s])
        audio[start:start + n] += cfg.amplitude * velocity * np.clip(env, 0.0, 1.0) * tone
        notes.append(NoteEvent(start / sr, (start + n) / sr, float(pitch), velocity))
    audio += rng.normal(0.0, 10.0 ** (cfg.noise_floor_db / 20.0), size=total)
    return LabeledClip(cfg.id, AudioClip(audio, sr), NoteList(notes))


def save_labeled_clip(clip: LabeledClip, directory) -> tuple:
    directory = Path(directory)
    wav = directory / f"{clip.id}.wav"
    js = directory / f"{clip.id}.notes.json"
    write_wav(clip.audio, wav)
    save_notes_json(clip.notes, js)
    return wav, js


def load_dataset_dir(directory, target_sr: int | None = None) -> list:
    """Load every ``<id>.wav`` that has a matching ``<id>.notes.json``, sorted by id."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    clips = []
    for wav in sorted(directory.glob("*.wav")):
        notes_path = wav.with_name(wav.stem + ".notes.json")
        if not notes_path.exists():
            continue
        audio = read_wav(wav, target_sr)
        notes = load_notes_json(notes_path)
        clips.append(LabeledClip(wav.stem, audio, notes))
    return clips
