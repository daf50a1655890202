import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from violin_amt.eval_metrics import evaluate
from violin_amt.notes import NoteEvent, NoteList
from violin_amt.targets_decode import (DecodeConfig, FrameHeads, PitchOutOfRange, decode_notes,
                                       encode_targets, refine_peak)

CFG = DecodeConfig()
H = 0.01
W = 0.05


def random_notes(rng, n_max=12, duration=8.0, pitches=(21, 108)):
    """Notes whose same-pitch neighbours are >= 2w apart and away from the clip edges."""
    notes = []
    busy = {}
    for _ in range(rng.integers(0, n_max + 1)):
        p = int(rng.integers(pitches[0], pitches[1] + 1))
        on = float(rng.uniform(W, duration - 1.0))
        dur = float(rng.uniform(2 * CFG.min_duration_s + 0.01, 0.9))
        off = min(on + dur, duration - W - 0.01)
        if off - on < 2 * CFG.min_duration_s:
            continue
        if any(not (off + 2 * W <= a or on >= b + 2 * W) for a, b in busy.get(p, [])):
            continue
        busy.setdefault(p, []).append((on, off))
        notes.append(NoteEvent(on, off, float(p), float(rng.uniform(0.1, 1.0))))
    return NoteList(notes)


def test_single_note_triangle_values():
    notes = NoteList([NoteEvent(0.5, 1.0, 60.0, 0.7)])
    heads = encode_targets(notes, 200, CFG)
    p = 60 - 21
    assert heads.onset[50, p] == 1.0
    assert heads.onset[49, p] == pytest.approx(0.8)
    assert heads.onset[51, p] == pytest.approx(0.8)
    assert heads.onset[55, p] == pytest.approx(0.0, abs=1e-12)
    assert heads.offset[100, p] == 1.0
    assert heads.frame[49, p] == 0 and heads.frame[50, p] == 1 and heads.frame[99, p] == 1
    assert heads.frame[100, p] == 0
    support = heads.onset[:, p] > 0
    assert np.all(heads.velocity[support, p] == 0.7)
    assert np.all(heads.velocity[~support, p] == 0)
    assert heads.onset[:, [q for q in range(88) if q != p]].sum() == 0


def test_empty_notes_give_zero_heads():
    heads = encode_targets(NoteList(), 30, CFG)
    for arr in heads.as_tuple():
        assert arr.shape == (30, 88) and not arr.any()


def test_overlapping_triangles_take_max():
    notes = NoteList([NoteEvent(0.50, 0.55, 60.0, 0.3), NoteEvent(0.56, 0.70, 60.0, 0.9)])
    heads = encode_targets(notes, 100, CFG)
    p = 39
    t = np.arange(100) * H
    tri = lambda c: np.maximum(0, 1 - np.abs(t - c) / W)
    assert heads.onset[:, p] == pytest.approx(np.maximum(tri(0.50), tri(0.56)))
    overlap = (tri(0.50) > 0) & (tri(0.56) > 0)
    assert np.all(heads.velocity[overlap, p] == 0.9)


def test_pitch_out_of_range():
    with pytest.raises(PitchOutOfRange) as err:
        encode_targets(NoteList([NoteEvent(0.1, 0.2, 110.0, 0.5), NoteEvent(0.1, 0.2, 60.0, 0.5)]), 50, CFG)
    assert len(err.value.notes) == 1


def test_refine_peak_examples():
    assert refine_peak(0.5, 0.9, 0.5, H) == 0.0
    assert refine_peak(0.76, 0.96, 0.84, H) == pytest.approx(0.002, abs=1e-15)
    assert refine_peak(0.38, 0.48, 0.42, H) == pytest.approx(0.002, abs=1e-15)
    assert refine_peak(0.84, 0.96, 0.76, H) == pytest.approx(-0.002, abs=1e-15)
    assert refine_peak(0.0, 0.0, 0.0, H) == 0.0


def test_refine_peak_is_clamped():
    assert refine_peak(0.0, 0.1, 0.1, H) == H / 2
    assert refine_peak(0.1, 0.1, 0.0, H) == -H / 2


@settings(max_examples=300, deadline=None)
@given(d=st.floats(-H / 2, H / 2), a=st.floats(0.05, 1.0), alpha=st.floats(0.01, 100.0))
def test_refine_peak_inverts_triangle(d, a, alpha):
    A, B, C = (a * (1 - abs(k * H - d) / W) for k in (-1, 0, 1))
    assert refine_peak(A, B, C, H) == pytest.approx(d, abs=1e-12)
    assert refine_peak(alpha * A, alpha * B, alpha * C, H) == pytest.approx(refine_peak(A, B, C, H), abs=1e-15)


def test_decode_isolated_note_round_trip():
    note = NoteEvent(0.8137, 1.4562, 69.0, 0.6)
    heads = encode_targets(NoteList([note]), 300, CFG)
    out = decode_notes(heads, CFG)
    assert len(out) == 1
    assert out[0].onset_s == pytest.approx(note.onset_s, abs=1e-3)
    assert out[0].offset_s == pytest.approx(note.offset_s, abs=1e-3)
    assert out[0].pitch_midi == 69.0
    assert out[0].velocity == pytest.approx(0.6)


def test_decode_all_zero():
    z = np.zeros((100, 88))
    assert len(decode_notes(FrameHeads(z, z, z, z), CFG)) == 0


def test_decode_runs_to_clip_end_without_offset_evidence():
    heads = encode_targets(NoteList([NoteEvent(0.5, 1.0, 60.0, 0.7)]), 200, CFG)
    frame = heads.frame.copy()
    frame[50:, 39] = 1.0
    heads = FrameHeads(heads.onset, np.zeros_like(heads.offset), frame, heads.velocity)
    out = decode_notes(heads, CFG)
    assert len(out) == 1
    assert out[0].offset_s == pytest.approx(199 * H)


def test_decode_frame_drop_ends_note():
    heads = encode_targets(NoteList([NoteEvent(0.5, 1.0, 60.0, 0.7)]), 200, CFG)
    heads = FrameHeads(heads.onset, np.zeros_like(heads.offset), heads.frame, heads.velocity)
    out = decode_notes(heads, CFG)
    assert out[0].offset_s == pytest.approx(1.0)


def test_decode_next_onset_truncates():
    # Same pitch, second onset while the frame is still active and no offset peak.
    heads = encode_targets(NoteList([NoteEvent(0.5, 0.9, 60.0, 0.7), NoteEvent(0.9, 1.3, 60.0, 0.7)]), 200, CFG)
    heads = FrameHeads(heads.onset, np.zeros_like(heads.offset), heads.frame, heads.velocity)
    out = decode_notes(heads, CFG)
    assert [round(n.onset_s, 6) for n in out] == [0.5, 0.9]
    assert out[0].offset_s == pytest.approx(0.9)


def test_decode_suppresses_onsets_closer_than_min_duration():
    on = np.zeros((100, 88))
    on[[20, 22], 10] = [0.9, 0.8]
    fr = np.zeros((100, 88))
    fr[20:60, 10] = 1.0
    out = decode_notes(FrameHeads(on, np.zeros_like(on), fr, np.zeros_like(on)), CFG)
    assert len(out) == 1
    assert out[0].offset_s == pytest.approx(0.6)


def test_round_trip_random_lists():
    rng = np.random.default_rng(0)
    for _ in range(30):
        notes = random_notes(rng)
        heads = encode_targets(notes, 801, CFG)
        out = decode_notes(heads, CFG)
        assert len(out) == len(notes)
        for a, b in zip(out, notes):
            assert a.pitch_midi == b.pitch_midi
            assert abs(a.onset_s - b.onset_s) <= 1e-3
            assert abs(a.offset_s - b.offset_s) <= 1e-3
        if len(notes):
            assert evaluate(notes, out).f1 == 1.0


heads_strategy = st.integers(0, 2**32 - 1).map(np.random.default_rng)


def _random_heads(rng, T=60, P=3):
    g = lambda: rng.uniform(0, 1, size=(T, P)) ** 3
    return FrameHeads(g(), g(), rng.uniform(0, 1, size=(T, P)), g())


@settings(max_examples=200, deadline=None)
@given(rng=heads_strategy, lo=st.floats(0.05, 0.9), bump=st.floats(0.0, 0.09))
def test_raising_onset_threshold_never_adds_notes(rng, lo, bump):
    heads = _random_heads(rng)
    n_lo = len(decode_notes(heads, DecodeConfig(onset_threshold=lo)))
    n_hi = len(decode_notes(heads, DecodeConfig(onset_threshold=lo + bump)))
    assert n_hi <= n_lo


@settings(max_examples=200, deadline=None)
@given(rng=heads_strategy)
def test_decoded_notes_are_valid(rng):
    heads = _random_heads(rng)
    for n in decode_notes(heads, CFG):
        assert n.offset_s - n.onset_s >= CFG.min_duration_s - 1e-12
        assert 21 <= n.pitch_midi <= 23
        assert 0 <= n.velocity <= 1


def test_frame_heads_validation():
    z = np.zeros((5, 4))
    with pytest.raises(ValueError):
        FrameHeads(z, z, z, np.zeros((5, 3)))
    with pytest.raises(ValueError):
        FrameHeads(z + 2, z, z, z)
