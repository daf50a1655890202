"""Note-level transcription metrics.

A reference and an estimated note can be paired when their onsets differ by
at most 50 ms, their pitches by at most half a semitone (50 cents), and,
unless offsets are ignored, their offsets by at most
``max(0.2 * reference duration, 50 ms)``. All bounds are inclusive. Scores
come from a maximum-cardinality matching over the admissible pairs.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass

import numpy as np

from .notes import NoteList

__all__ = [
    "MatchMode",
    "EvalTolerances",
    "EvalReport",
    "SizeLimitExceeded",
    "valid_pairs",
    "match_notes",
    "oracle_match",
    "evaluate",
    "aggregate_reports",
]

ORACLE_MAX_NOTES = 8
# Absorbs binary rounding of decimal times so that a difference of "exactly"
# 50 ms (e.g. 1.05 - 1.0) still passes the inclusive bound.
COMPARE_SLACK = 1e-9


class SizeLimitExceeded(ValueError):
    pass


class MatchMode(enum.Enum):
    WITH_OFFSET = "with_offset"
    ONSET_ONLY = "onset_only"


@dataclass(frozen=True)
class EvalTolerances:
    onset_s: float = 0.05
    pitch_semitones: float = 0.5
    offset_ratio: float = 0.2
    offset_min_s: float = 0.05

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValueError(f"tolerance {name} must be strictly positive")


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    f1_no: float
    n_ref: int
    n_est: int
    n_match: int
    n_match_no: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def valid_pairs(ref: NoteList, est: NoteList, tol: EvalTolerances = EvalTolerances(),
                mode: MatchMode = MatchMode.WITH_OFFSET) -> np.ndarray:
    """Boolean ``len(ref) x len(est)`` matrix of admissible pairs."""
    if len(ref) == 0 or len(est) == 0:
        return np.zeros((len(ref), len(est)), dtype=bool)
    r_on, e_on = ref.onsets[:, None], est.onsets[None, :]
    ok = np.abs(r_on - e_on) <= tol.onset_s + COMPARE_SLACK
    ok &= np.abs(ref.pitches[:, None] - est.pitches[None, :]) <= tol.pitch_semitones + COMPARE_SLACK
    if mode is MatchMode.WITH_OFFSET:
        r_off = ref.offsets[:, None]
        window = np.maximum(tol.offset_ratio * (r_off - r_on), tol.offset_min_s)
        ok &= np.abs(r_off - est.offsets[None, :]) <= window + COMPARE_SLACK
    return ok


def _max_matching(adj: np.ndarray) -> list:
    # Augmenting-path search (Kuhn); instances are small.
    n_ref, n_est = adj.shape
    neighbours = [np.flatnonzero(adj[r]).tolist() for r in range(n_ref)]
    est_owner = [-1] * n_est

    def augment(r, seen):
        for e in neighbours[r]:
            if seen[e]:
                continue
            seen[e] = True
            if est_owner[e] == -1 or augment(est_owner[e], seen):
                est_owner[e] = r
                return True
        return False

    for r in range(n_ref):
        if neighbours[r]:
            augment(r, [False] * n_est)
    return sorted((r, e) for e, r in enumerate(est_owner) if r != -1)


def match_notes(ref: NoteList, est: NoteList, tol: EvalTolerances = EvalTolerances(),
                mode: MatchMode = MatchMode.WITH_OFFSET) -> list:
    """Maximum-cardinality one-to-one pairing as ``(ref index, est index)`` tuples."""
    return _max_matching(valid_pairs(ref, est, tol, mode))


def oracle_match(ref: NoteList, est: NoteList, tol: EvalTolerances = EvalTolerances(),
                 mode: MatchMode = MatchMode.WITH_OFFSET) -> int:
    """Maximum matching size by exhaustive search over injective assignments.

    Independent of :func:`match_notes`; limited to 8 notes per side.
    """
    if len(ref) > ORACLE_MAX_NOTES or len(est) > ORACLE_MAX_NOTES:
        raise SizeLimitExceeded(f"oracle supports at most {ORACLE_MAX_NOTES} notes per side")
    ok = valid_pairs(ref, est, tol, mode).tolist()
    n_ref, n_est = len(ref), len(est)
    best = 0
    used = [False] * n_ref

    def search(e, size):
        nonlocal best
        if size > best:
            best = size
        if e == n_est or size + (n_est - e) <= best:
            return
        for r in range(n_ref):
            if ok[r][e] and not used[r]:
                used[r] = True
                search(e + 1, size + 1)
                used[r] = False
        search(e + 1, size)

    search(0, 0)
    return best


def _prf(n_match, n_ref, n_est):
    precision = n_match / n_est if n_est else 0.0
    recall = n_match / n_ref if n_ref else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def evaluate(ref: NoteList, est: NoteList, tol: EvalTolerances = EvalTolerances(),
             onset_only: bool = False) -> EvalReport:
    """Precision, recall and F1 with offsets, plus onset-only F1.

    With ``onset_only`` the precision/recall/F1 fields are also computed
    while ignoring offsets.
    """
    n_match = len(match_notes(ref, est, tol, MatchMode.WITH_OFFSET))
    n_match_no = len(match_notes(ref, est, tol, MatchMode.ONSET_ONLY))
    precision, recall, f1 = _prf(n_match_no if onset_only else n_match, len(ref), len(est))
    _, _, f1_no = _prf(n_match_no, len(ref), len(est))
    return EvalReport(precision, recall, f1, f1_no, len(ref), len(est), n_match, n_match_no)


def aggregate_reports(reports) -> dict:
    """Per-file arithmetic mean of the scores and the pooled-count scores."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    mean = {k: float(np.mean([getattr(r, k) for r in reports])) for k in ("precision", "recall", "f1", "f1_no")}
    n_ref = sum(r.n_ref for r in reports)
    n_est = sum(r.n_est for r in reports)
    n_match = sum(r.n_match for r in reports)
    n_match_no = sum(r.n_match_no for r in reports)
    p, r, f1 = _prf(n_match, n_ref, n_est)
    _, _, f1_no = _prf(n_match_no, n_ref, n_est)
    pooled = EvalReport(p, r, f1, f1_no, n_ref, n_est, n_match, n_match_no)
    return {"mean": mean, "pooled": pooled.to_dict()}
