"""scikit-learn style wrappers around the functional pipeline.

The transformers and the transcriber follow the estimator protocol
(``get_params``/``set_params``, ``fit`` returning ``self``, fitted state in
trailing-underscore attributes), so they can be cloned and grid-searched.
"""
from __future__ import annotations

import io

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .acoustic_model import Checkpoint, ModelConfig, TrainConfig, forward, load_checkpoint, save_checkpoint, train
from .audio_io import AudioClip, resample
from .dataset import LabeledClip
from .dsp_augment import AugmentConfig, apply_chain, sample_chain_params
from .eval_metrics import EvalTolerances, evaluate
from .features import FeatureConfig, log_mel
from .notes import NoteList
from .targets_decode import DecodeConfig, decode_notes

__all__ = [
    "check_clips",
    "check_note_lists",
    "LogMelExtractor",
    "EffectsChainAugmenter",
    "ViolinTranscriber",
]


def check_clips(X, sample_rate: int | None = None) -> list:
    """Coerce ``X`` to a list of :class:`AudioClip`.

    Accepts clips, labeled clips or 1-D arrays (which are taken to be at
    ``sample_rate``). Clips at another rate are resampled when
    ``sample_rate`` is given.
    """
    if isinstance(X, (AudioClip, LabeledClip)) or (isinstance(X, np.ndarray) and X.ndim == 1):
        X = [X]
    clips = []
    for k, item in enumerate(X):
        if isinstance(item, LabeledClip):
            item = item.audio
        if not isinstance(item, AudioClip):
            arr = np.asarray(item, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"X[{k}]: expected a 1-D sample array, got shape {arr.shape}")
            if sample_rate is None:
                raise ValueError(f"X[{k}]: raw arrays need an explicit sample rate")
            item = AudioClip(arr, sample_rate)
        if sample_rate is not None and item.sample_rate != sample_rate:
            item = resample(item, sample_rate)
        clips.append(item)
    if not clips:
        raise ValueError("X contains no clips")
    return clips


def check_note_lists(y, n: int) -> list:
    if y is None:
        raise ValueError("note annotations are required")
    notes = [yi if isinstance(yi, NoteList) else NoteList(yi) for yi in y]
    if len(notes) != n:
        raise ValueError(f"got {len(notes)} note lists for {n} clips")
    return notes


def _split_labeled(X, y):
    X = list(X) if not isinstance(X, (AudioClip, LabeledClip)) else [X]
    if y is None and X and all(isinstance(x, LabeledClip) for x in X):
        y = [x.notes for x in X]
    return X, y


class LogMelExtractor(TransformerMixin, BaseEstimator):
    """Clips to log-mel matrices (one ``frames x n_mels`` array per clip)."""

    def __init__(self, sr=16000, n_fft=2048, win_length=2048, hop=160, n_mels=229,
                 fmin=30.0, fmax=8000.0, amin=1e-10):
        self.sr = sr
        self.n_fft = n_fft
        self.win_length = win_length
        self.hop = hop
        self.n_mels = n_mels
        self.fmin = fmin
        self.fmax = fmax
        self.amin = amin

    def fit(self, X=None, y=None):
        self.config_ = FeatureConfig(**self.get_params())
        self.n_features_out_ = self.n_mels
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        return [log_mel(c, self.config_).data for c in check_clips(X, self.config_.sr)]


class EffectsChainAugmenter(BaseEstimator):
    """Applies a freshly drawn effects chain to every clip.

    ``transform(X)`` returns augmented clips; ``transform(X, notes)``
    returns ``(clips, notes)`` with the labels moved by the pitch shift.
    """

    def __init__(self, pitch_range_semitones=(-0.1, 0.1), gain_db=5.0, bp_fc_range_hz=(32.0, 4096.0),
                 bp_q_range=(0.5, 4.0), reverb_room_size=0.35, reverb_damping=0.5, reverb_wet=0.33,
                 reverb_dry=0.7, random_state=None):
        self.pitch_range_semitones = pitch_range_semitones
        self.gain_db = gain_db
        self.bp_fc_range_hz = bp_fc_range_hz
        self.bp_q_range = bp_q_range
        self.reverb_room_size = reverb_room_size
        self.reverb_damping = reverb_damping
        self.reverb_wet = reverb_wet
        self.reverb_dry = reverb_dry
        self.random_state = random_state

    def fit(self, X=None, y=None):
        params = self.get_params()
        params.pop("random_state")
        self.config_ = AugmentConfig(**params)
        self.rng_ = np.random.default_rng(self.random_state)
        return self

    def transform(self, X, notes=None):
        check_is_fitted(self, "config_")
        clips = check_clips(X)
        labels = check_note_lists(notes, len(clips)) if notes is not None else [NoteList()] * len(clips)
        self.chain_params_ = []
        out_clips, out_notes = [], []
        for clip, nl in zip(clips, labels):
            p = sample_chain_params(self.rng_, self.config_)
            self.chain_params_.append(p)
            c, n = apply_chain(clip, nl, p)
            out_clips.append(c)
            out_notes.append(n)
        return (out_clips, out_notes) if notes is not None else out_clips

    def fit_transform(self, X, notes=None):
        return self.fit(X).transform(X, notes)


class ViolinTranscriber(BaseEstimator):
    """Audio-to-notes estimator wrapping feature extraction, training and decoding.

    ``fit(X, y)`` takes clips and their note lists (or labeled clips alone).
    Passing ``init_checkpoint`` (a path or :class:`Checkpoint`) fine-tunes
    from it instead of starting from a random initialization.
    """

    def __init__(self, context_frames=3, hidden_sizes=(256, 256), batch_size=5, learning_rate=5e-4,
                 total_steps=10000, segment_s=10.0, augment=False, onset_threshold=0.3,
                 offset_threshold=0.3, frame_threshold=0.1, min_duration_s=0.03, sr=16000,
                 random_state=0, init_checkpoint=None, verbose=False):
        self.context_frames = context_frames
        self.hidden_sizes = hidden_sizes
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.total_steps = total_steps
        self.segment_s = segment_s
        self.augment = augment
        self.onset_threshold = onset_threshold
        self.offset_threshold = offset_threshold
        self.frame_threshold = frame_threshold
        self.min_duration_s = min_duration_s
        self.sr = sr
        self.random_state = random_state
        self.init_checkpoint = init_checkpoint
        self.verbose = verbose

    def _feature_config(self):
        return FeatureConfig(sr=self.sr, fmax=min(8000.0, self.sr / 2.0))

    def _decode_config(self):
        return DecodeConfig(self.onset_threshold, self.offset_threshold, self.frame_threshold,
                            self.min_duration_s)

    def fit(self, X, y=None):
        X, y = _split_labeled(X, y)
        fcfg = self._feature_config()
        clips = check_clips(X, fcfg.sr)
        notes = check_note_lists(y, len(clips))
        seed = 0 if self.random_state is None else int(self.random_state)
        init = self.init_checkpoint
        if isinstance(init, str) or hasattr(init, "__fspath__"):
            init = load_checkpoint(init)
        mcfg = init.config if init is not None else ModelConfig(
            context_frames=self.context_frames, n_mels=fcfg.n_mels,
            hidden_sizes=tuple(self.hidden_sizes), init_seed=seed)
        tcfg = TrainConfig(batch_size=self.batch_size, lr0=self.learning_rate, total_steps=self.total_steps,
                           segment_s=self.segment_s, segment_hop_s=self.segment_s / 2.0,
                           augment=self.augment, seed=seed)
        data = [LabeledClip(f"clip{k:04d}", c, n) for k, (c, n) in enumerate(zip(clips, notes))]
        self.loss_curve_ = []
        self.checkpoint_ = train(tcfg, mcfg, data, init=init, fcfg=fcfg, dcfg=self._decode_config(),
                                 callback=lambda step, lr, value: self.loss_curve_.append(value),
                                 log_stream=None if self.verbose else io.StringIO())
        return self

    def predict_heads(self, X) -> list:
        check_is_fitted(self, "checkpoint_")
        fcfg = self._feature_config()
        return [forward(self.checkpoint_.params, log_mel(c, fcfg)) for c in check_clips(X, fcfg.sr)]

    def predict(self, X) -> list:
        dcfg = self._decode_config()
        return [decode_notes(h, dcfg) for h in self.predict_heads(X)]

    def score(self, X, y=None) -> float:
        """Mean note F1 (onset, pitch and offset) over the clips."""
        X, y = _split_labeled(X, y)
        refs = check_note_lists(y, len(X))
        reports = [evaluate(r, e, EvalTolerances()) for r, e in zip(refs, self.predict(X))]
        return float(np.mean([r.f1 for r in reports]))

    def save(self, path) -> None:
        check_is_fitted(self, "checkpoint_")
        save_checkpoint(self.checkpoint_, path)

    @classmethod
    def from_checkpoint(cls, ckpt, **params) -> "ViolinTranscriber":
        if not isinstance(ckpt, Checkpoint):
            ckpt = load_checkpoint(ckpt)
        est = cls(context_frames=ckpt.config.context_frames, hidden_sizes=ckpt.config.hidden_sizes, **params)
        est.checkpoint_ = ckpt
        return est
