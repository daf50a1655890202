"""Violin transcription toolkit: augmentation, log-mel features, a frame-wise
acoustic model with sub-frame onset/offset decoding, and note-level metrics."""

from .audio_io import AudioClip, read_wav, resample, write_wav
from .notes import NoteEvent, NoteList
from .targets_decode import DecodeConfig, FrameHeads, decode_notes, encode_targets, refine_peak
from .features import FeatureConfig, FeatureMatrix, log_mel, mel_filterbank, stft_power
from .dsp_augment import AugmentConfig, ChainParams, apply_chain, sample_chain_params
from .acoustic_model import (Checkpoint, ModelConfig, TrainConfig, cosine_lr, forward, load_checkpoint,
                             model_init, save_checkpoint, train)
from .dataset import LabeledClip, SynthConfig, load_notes_json, load_notes_tsv, save_notes_json, synth_clip
from .eval_metrics import EvalReport, EvalTolerances, MatchMode, evaluate, match_notes

__version__ = "0.1.0"
