import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import peak_frequency
from violin_amt.audio_io import AudioClip
from violin_amt.dataset import (LabeledClip, NonPositiveFrequency, ParseError, SchemaError, SynthConfig,
                                load_dataset_dir, load_notes, load_notes_json, load_notes_tsv,
                                save_labeled_clip, save_notes_json, segment, synth_clip)
from violin_amt.notes import NoteEvent, NoteList


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_tsv_basic_and_comments(tmp_path):
    p = write(tmp_path, "a.tsv", "# onset\tfreq\tdur\n1.0\t220.0\t0.5\n0.5\t440.0\t1.0\n")
    notes = load_notes_tsv(p)
    assert len(notes) == 2
    assert notes[0] == NoteEvent(0.5, 1.5, 69.0, 0.8)
    assert notes[1].pitch_midi == pytest.approx(57.0, abs=1e-12)


def test_tsv_parse_error_reports_line(tmp_path):
    with pytest.raises(ParseError) as err:
        load_notes_tsv(write(tmp_path, "b.tsv", "0.5\tabc\t1.0\n"))
    assert err.value.line == 1
    with pytest.raises(ParseError) as err:
        load_notes_tsv(write(tmp_path, "c.tsv", "0.5\t440\t1.0\n0.5\t440\n"))
    assert err.value.line == 2


def test_tsv_nonpositive_frequency(tmp_path):
    with pytest.raises(NonPositiveFrequency):
        load_notes_tsv(write(tmp_path, "d.tsv", "0.5\t0.0\t1.0\n"))


def test_json_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    on = rng.uniform(0, 100, 100)
    notes = NoteList.from_arrays(on, on + rng.uniform(0.01, 2, 100), rng.uniform(21, 108, 100),
                                 rng.uniform(0, 1, 100))
    save_notes_json(notes, tmp_path / "n.json")
    back = load_notes_json(tmp_path / "n.json")
    assert len(back) == 100
    for name in ("onsets", "offsets", "pitches", "velocities"):
        assert np.max(np.abs(getattr(back, name) - getattr(notes, name))) <= 1e-9


def test_json_empty(tmp_path):
    save_notes_json(NoteList(), tmp_path / "e.json")
    assert json.loads((tmp_path / "e.json").read_text()) == {"notes": []}
    assert len(load_notes_json(tmp_path / "e.json")) == 0


def test_json_schema_errors(tmp_path):
    p = write(tmp_path, "m.json", json.dumps({"notes": [{"onset_s": 0.1, "pitch_midi": 60, "velocity": 0.5}]}))
    with pytest.raises(SchemaError) as err:
        load_notes_json(p)
    assert err.value.field == "offset_s" and "offset_s" in str(err.value)
    p = write(tmp_path, "t.json", json.dumps({"notes": [{"onset_s": "x", "offset_s": 1, "pitch_midi": 60, "velocity": 0.5}]}))
    with pytest.raises(SchemaError):
        load_notes_json(p)
    with pytest.raises(ParseError):
        load_notes_json(write(tmp_path, "bad.json", "{not json"))


def test_tsv_json_lossless(tmp_path):
    tsv = load_notes(write(tmp_path, "x.tsv", "0.25\t329.6275569128699\t0.75\n1.5\t880\t0.125\n"))
    save_notes_json(tsv, tmp_path / "x.json")
    assert load_notes(tmp_path / "x.json") == tsv


def _clip(duration, notes, sr=1000):
    return LabeledClip("c", AudioClip(np.ones(int(round(duration * sr))), sr), NoteList(notes))


def test_segment_short_clip_is_padded():
    segs = segment(_clip(3.0, [NoteEvent(0.5, 1.0, 60)]), 10.0, 5.0)
    assert len(segs) == 1
    assert len(segs[0].audio.samples) == 10000
    assert segs[0].audio.samples[3000:].sum() == 0
    assert segs[0].id == "c_000"


def test_segment_boundary_note_is_split():
    segs = segment(_clip(20.0, [NoteEvent(9.5, 10.5, 60)]), 10.0, 10.0)
    assert len(segs) == 2
    assert segs[0].notes[0].onset_s == pytest.approx(9.5) and segs[0].notes[0].offset_s == pytest.approx(10.0)
    assert segs[1].notes[0].onset_s == pytest.approx(0.0) and segs[1].notes[0].offset_s == pytest.approx(0.5)


def test_segment_drops_slivers():
    segs = segment(_clip(20.0, [NoteEvent(9.0, 10.02, 60)]), 10.0, 10.0)
    assert len(segs[0].notes) == 1 and len(segs[1].notes) == 0


@settings(max_examples=50, deadline=None)
@given(duration=st.floats(0.5, 40.0), seg=st.floats(1.0, 12.0))
def test_segment_count_with_equal_hop(duration, seg):
    clip = _clip(duration, [])
    segs = segment(clip, seg, seg)
    assert len(segs) == max(1, int(np.ceil(clip.audio.duration / seg)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_segment_preserves_note_mass(seed):
    rng = np.random.default_rng(seed)
    on = np.sort(rng.uniform(0, 18, 6))
    notes = [NoteEvent(o, min(o + rng.uniform(0.05, 3.0), 19.9), 60 + k) for k, o in enumerate(on)]
    segs = segment(_clip(20.0, notes), 4.0, 4.0)
    for note in notes:
        covered = 0.0
        for k, s in enumerate(segs):
            covered += sum(f.duration for f in s.notes if f.pitch_midi == note.pitch_midi)
        n_windows = int(np.ceil(note.offset_s / 4.0)) - int(np.floor(note.onset_s / 4.0))
        assert note.duration - 0.03 * n_windows <= covered + 1e-9
        assert covered <= note.duration + 1e-9


def test_synth_note_count_and_labels():
    for seed in range(30):
        clip = synth_clip(SynthConfig(seed=seed))
        assert 3 <= len(clip.notes) <= 12
        assert clip.notes[-1].offset_s <= clip.audio.duration
        assert all(55 <= n.pitch_midi <= 96 for n in clip.notes)


def test_synth_deterministic():
    a, b = synth_clip(SynthConfig(seed=11)), synth_clip(SynthConfig(seed=11))
    assert np.array_equal(a.audio.samples, b.audio.samples) and a.notes == b.notes
    assert not np.array_equal(a.audio.samples[:1000], synth_clip(SynthConfig(seed=12)).audio.samples[:1000])


def test_synth_a4_fundamental():
    cfg = SynthConfig(seed=3, pitch_range=(69, 69), duration_range_s=(0.8, 0.8), vibrato_prob=0.0)
    clip = synth_clip(cfg)
    n = clip.notes[0]
    sr = clip.audio.sample_rate
    x = clip.audio.samples[int(n.onset_s * sr) + 400:int(n.offset_s * sr) - 1000]
    assert peak_frequency(x, sr, 300, 600) == pytest.approx(440.0, abs=0.5)
    vib = synth_clip(SynthConfig(seed=3, pitch_range=(69, 69), duration_range_s=(0.8, 0.8), vibrato_prob=1.0))
    m = vib.notes[0]
    y = vib.audio.samples[int(m.onset_s * sr) + 400:int(m.offset_s * sr) - 1000]
    depth = 440.0 * (2 ** (0.2 / 12) - 1)
    assert abs(peak_frequency(y, sr, 300, 600) - 440.0) <= depth + 0.5


def test_synth_onsets_are_energy_rises():
    for seed in range(10):
        clip = synth_clip(SynthConfig(seed=seed))
        sr = clip.audio.sample_rate
        x = clip.audio.samples
        win = int(0.01 * sr)
        energy = lambda t: np.mean(x[int(t * sr) - win // 2:int(t * sr) + win // 2] ** 2)
        for n in clip.notes:
            assert 10 * np.log10(energy(n.onset_s + 0.02) / energy(n.onset_s - 0.02)) >= 6.0


def test_labeled_clip_rejects_late_notes():
    with pytest.raises(ValueError):
        _clip(1.0, [NoteEvent(0.5, 1.5, 60)])


def test_dataset_dir_round_trip(tmp_path):
    clips = [synth_clip(SynthConfig(seed=s, id=f"clip{s:03d}")) for s in range(2)]
    for c in clips:
        save_labeled_clip(c, tmp_path)
    (tmp_path / "orphan.wav").write_bytes((tmp_path / "clip000.wav").read_bytes())
    loaded = load_dataset_dir(tmp_path)
    assert [c.id for c in loaded] == ["clip000", "clip001"]
    assert loaded[0].notes == clips[0].notes
    assert np.max(np.abs(loaded[0].audio.samples - clips[0].audio.samples)) <= 1 / 32768 + 1e-12
    with pytest.raises(FileNotFoundError):
        load_dataset_dir(tmp_path / "missing")
