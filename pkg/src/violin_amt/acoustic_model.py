"""Frame-wise acoustic model with four sigmoid heads.

A context-window MLP: each frame sees ``2C + 1`` stacked log-mel frames
(edge frames replicated), passes through affine+ReLU trunk layers, and
feeds four affine+sigmoid heads (onset, offset, frame, velocity) of width
``P``. Gradients are computed by hand and trained with Adam under a cosine
annealing schedule. Checkpoints carry the config so fine-tuning can start
from any earlier run.
"""
from __future__ import annotations

import json
import math
import struct
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .dsp_augment import AugmentConfig, apply_chain, sample_chain_params
from .features import FeatureConfig, FeatureMatrix, log_mel
from .targets_decode import HEAD_NAMES, DecodeConfig, FrameHeads, encode_targets

__all__ = [
    "ModelConfig",
    "ModelParams",
    "TrainConfig",
    "Checkpoint",
    "ShapeMismatch",
    "ConfigMismatch",
    "DataEmpty",
    "CheckpointError",
    "BadMagic",
    "VersionMismatch",
    "TruncatedFile",
    "model_init",
    "forward",
    "loss",
    "loss_and_grad",
    "grad_check",
    "cosine_lr",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"AMT1"
CHECKPOINT_VERSION = 1
PROB_CLAMP = 1e-7
# Fixed input normalization (x + 36) / 5: centres typical log-mel levels and
# gives unit steps of 5 dB. Wide input scales leave the sparse onset and
# offset heads under-trained within a short budget.
FEATURE_OFFSET_DB = 36.0
FEATURE_SCALE_DB = 5.0


class ShapeMismatch(ValueError):
    pass


class ConfigMismatch(ValueError):
    pass


class DataEmpty(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class TruncatedFile(CheckpointError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    context_frames: int = 3
    n_mels: int = 229
    hidden_sizes: tuple = (256, 256)
    P: int = 88
    pitch_lo: int = 21
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.context_frames < 0:
            raise ValueError("context_frames must be >= 0")
        if self.n_mels < 1 or self.P < 1:
            raise ValueError("n_mels and P must be >= 1")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be >= 1")

    @property
    def input_size(self) -> int:
        return (2 * self.context_frames + 1) * self.n_mels

    def param_shapes(self):
        """Parameter names and shapes in checkpoint order."""
        shapes = []
        fan_in = self.input_size
        for k, h in enumerate(self.hidden_sizes):
            shapes.append((f"trunk{k}.W", (fan_in, h)))
            shapes.append((f"trunk{k}.b", (h,)))
            fan_in = h
        for name in HEAD_NAMES:
            shapes.append((f"{name}.W", (fan_in, self.P)))
            shapes.append((f"{name}.b", (self.P,)))
        return shapes

    def to_json(self) -> str:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


class ModelParams:
    """Named weight and bias arrays, ordered as ``config.param_shapes()``."""

    def __init__(self, config: ModelConfig, arrays: dict):
        self.config = config
        self.arrays = {}
        for name, shape in config.param_shapes():
            arr = np.asarray(arrays[name])
            if arr.shape != shape:
                raise ShapeMismatch(f"{name}: shape {arr.shape} != {shape}")
            self.arrays[name] = arr

    def __getitem__(self, name):
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays.items())

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config, {k: v.astype(dtype) for k, v in self.arrays.items()})

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.config, {k: np.zeros_like(v) for k, v in self.arrays.items()})

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of config and all arrays."""
        if self.config != other.config:
            return False
        return all(
            a.dtype == b.dtype and a.tobytes() == b.tobytes()
            for a, b in zip(self.arrays.values(), other.arrays.values())
        )


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 5
    lr0: float = 5e-4
    lr_min: float = 0.0
    total_steps: int = 10000
    segment_s: float = 10.0
    segment_hop_s: float = 5.0
    augment: bool = False
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not self.lr0 > self.lr_min >= 0:
            raise ValueError("require lr0 > lr_min >= 0")
        if self.segment_s <= 0 or self.segment_hop_s <= 0:
            raise ValueError("segment_s and segment_hop_s must be positive")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass(eq=False)
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    step: int = 0
    moments: tuple | None = None  # (first, second) ModelParams, optional

    def equals(self, other: "Checkpoint") -> bool:
        if self.step != other.step or not self.params.equals(other.params):
            return False
        if (self.moments is None) != (other.moments is None):
            return False
        if self.moments is None:
            return True
        return all(a.equals(b) for a, b in zip(self.moments, other.moments))


def model_init(cfg: ModelConfig, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights and zero biases, deterministic in ``init_seed``."""
    rng = np.random.default_rng(cfg.init_seed)
    arrays = {}
    for name, shape in cfg.param_shapes():
        if len(shape) == 2:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arrays[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
        else:
            arrays[name] = np.zeros(shape, dtype=dtype)
    return ModelParams(cfg, arrays)


def stack_context(feats: np.ndarray, context: int) -> np.ndarray:
    """Concatenate frames ``i-C .. i+C`` per row, replicating edge frames."""
    T = feats.shape[0]
    z = (feats + FEATURE_OFFSET_DB) / FEATURE_SCALE_DB
    if context == 0:
        return z
    idx = np.clip(np.arange(T)[:, None] + np.arange(-context, context + 1)[None, :], 0, T - 1)
    return z[idx].reshape(T, -1)


def _check_feats(params: ModelParams, feats: FeatureMatrix):
    if feats.kind != "log_mel":
        raise ShapeMismatch(f"model expects log_mel features, got {feats.kind}")
    if feats.data.shape[1] != params.config.n_mels:
        raise ShapeMismatch(f"features have {feats.data.shape[1]} bins, model expects {params.config.n_mels}")
    if feats.data.shape[0] < 1:
        raise ShapeMismatch("need at least one frame")


def _forward_rows(params: ModelParams, x: np.ndarray):
    """Returns head probabilities and the trunk activations needed for backprop."""
    cfg = params.config
    acts = [x]
    pre = []
    a = x
    for k in range(len(cfg.hidden_sizes)):
        z = a @ params[f"trunk{k}.W"] + params[f"trunk{k}.b"]
        pre.append(z)
        a = np.maximum(z, 0)
        acts.append(a)
    probs = {name: expit(a @ params[f"{name}.W"] + params[f"{name}.b"]) for name in HEAD_NAMES}
    return probs, acts, pre


def forward(params: ModelParams, feats: FeatureMatrix) -> FrameHeads:
    _check_feats(params, feats)
    dtype = next(iter(params.arrays.values())).dtype
    x = stack_context(np.asarray(feats.data, dtype=dtype), params.config.context_frames)
    probs, _, _ = _forward_rows(params, x)
    return FrameHeads(*(probs[name] for name in HEAD_NAMES),
                      frame_rate=feats.frame_rate, pitch_lo=params.config.pitch_lo)


def _bce_cells(p, t):
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(t * np.log(pc) + (1.0 - t) * np.log(1.0 - pc))


def _loss_terms(probs: dict, targets: dict):
    mask = targets["onset"] > 0
    count = max(1, int(np.count_nonzero(mask)))
    terms = {}
    for name in ("onset", "offset", "frame"):
        terms[name] = float(np.mean(_bce_cells(probs[name], targets[name]), dtype=np.float64))
    vel = _bce_cells(probs["velocity"], targets["velocity"])
    terms["velocity"] = float(np.sum(vel[mask], dtype=np.float64)) / count
    return terms, mask, count


def loss(heads: FrameHeads, targets: FrameHeads) -> float:
    """Sum of mean BCE on onset/offset/frame plus onset-masked velocity BCE."""
    if heads.onset.shape != targets.onset.shape:
        raise ShapeMismatch(f"heads {heads.onset.shape} vs targets {targets.onset.shape}")
    probs = {name: getattr(heads, name) for name in HEAD_NAMES}
    tgts = {name: getattr(targets, name) for name in HEAD_NAMES}
    terms, _, _ = _loss_terms(probs, tgts)
    return sum(terms.values())


def _rows_loss_and_grad(params: ModelParams, x: np.ndarray, targets: dict):
    cfg = params.config
    probs, acts, pre = _forward_rows(params, x)
    terms, mask, count = _loss_terms(probs, targets)
    n_cells = probs["onset"].size
    dtype = x.dtype
    grads = {}
    d_hidden = None
    h_last = acts[-1]
    for name in HEAD_NAMES:
        p = probs[name]
        inside = (p >= PROB_CLAMP) & (p <= 1.0 - PROB_CLAMP)
        if name == "velocity":
            dlogit = (p - targets[name]) * (inside & mask) / dtype.type(count)
        else:
            dlogit = (p - targets[name]) * inside / dtype.type(n_cells)
        dlogit = dlogit.astype(dtype, copy=False)
        grads[f"{name}.W"] = h_last.T @ dlogit
        grads[f"{name}.b"] = dlogit.sum(axis=0)
        contrib = dlogit @ params[f"{name}.W"].T
        d_hidden = contrib if d_hidden is None else d_hidden + contrib
    for k in reversed(range(len(cfg.hidden_sizes))):
        dz = d_hidden * (pre[k] > 0)
        grads[f"trunk{k}.W"] = acts[k].T @ dz
        grads[f"trunk{k}.b"] = dz.sum(axis=0)
        if k > 0:
            d_hidden = dz @ params[f"trunk{k}.W"].T
    return sum(terms.values()), ModelParams(cfg, grads)


def loss_and_grad(params: ModelParams, feats: FeatureMatrix, targets: FrameHeads):
    """Loss and its analytic gradient with respect to every parameter."""
    _check_feats(params, feats)
    if targets.onset.shape != (feats.data.shape[0], params.config.P):
        raise ShapeMismatch("targets do not match frames x pitch bins")
    dtype = next(iter(params.arrays.values())).dtype
    x = stack_context(np.asarray(feats.data, dtype=dtype), params.config.context_frames)
    tgts = {name: getattr(targets, name).astype(dtype) for name in HEAD_NAMES}
    return _rows_loss_and_grad(params, x, tgts)


def _tiny_problem(cfg: ModelConfig, T: int, seed: int):
    rng = np.random.default_rng(seed)
    params = model_init(cfg, dtype=np.float64)
    for name, arr in params:
        if name.endswith(".b"):
            arr[...] = rng.normal(0.0, 0.1, size=arr.shape)
    feats = FeatureMatrix(rng.uniform(-100.0, 40.0, size=(T, cfg.n_mels)), 100.0, "log_mel")
    onset = rng.uniform(0, 1, size=(T, cfg.P)) * (rng.uniform(size=(T, cfg.P)) < 0.5)
    targets = FrameHeads(
        onset,
        rng.uniform(0, 1, size=(T, cfg.P)),
        (rng.uniform(size=(T, cfg.P)) < 0.5).astype(np.float64),
        rng.uniform(0, 1, size=(T, cfg.P)),
        pitch_lo=cfg.pitch_lo,
    )
    return params, feats, targets


def grad_check(cfg: ModelConfig, eps: float = 1e-4, T: int = 6, seed: int = 0,
               problem=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in float64 on a random instance unless ``problem`` supplies a
    ``(params, feats, targets)`` triple.
    """
    params, feats, targets = problem if problem is not None else _tiny_problem(cfg, T, seed)
    params = params.astype(np.float64)
    _, grads = loss_and_grad(params, feats, targets)
    worst = 0.0
    for name, arr in params:
        g = grads[name]
        flat = arr.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up, _ = loss_and_grad(params, feats, targets)
            flat[j] = orig - eps
            down, _ = loss_and_grad(params, feats, targets)
            flat[j] = orig
            g_fd = (up - down) / (2.0 * eps)
            g_a = g.reshape(-1)[j]
            worst = max(worst, abs(g_a - g_fd) / max(1e-8, abs(g_a) + abs(g_fd)))
    return worst


def cosine_lr(step: int, cfg: TrainConfig) -> float:
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + math.cos(math.pi * step / cfg.total_steps))


class _SegmentSource:
    """Training windows with cached features/targets for the un-augmented path."""

    def __init__(self, data, tcfg: TrainConfig, mcfg: ModelConfig, fcfg: FeatureConfig,
                 dcfg: DecodeConfig):
        from .dataset import segment

        self.segments = []
        for clip in data:
            if clip.audio.sample_rate != fcfg.sr:
                raise ValueError(
                    f"clip {clip.id!r} is {clip.audio.sample_rate} Hz, features expect {fcfg.sr} Hz")
            self.segments.extend(segment(clip, tcfg.segment_s, tcfg.segment_hop_s))
        if not self.segments:
            raise DataEmpty("training data contains no segments")
        self.mcfg, self.fcfg, self.dcfg = mcfg, fcfg, dcfg
        self._cache = {}

    def __len__(self):
        return len(self.segments)

    def render(self, audio, notes):
        feats = log_mel(audio, self.fcfg)
        x = stack_context(feats.data.astype(np.float32), self.mcfg.context_frames)
        heads = encode_targets(notes, feats.data.shape[0], self.dcfg, self.fcfg.frame_rate,
                               self.mcfg.pitch_lo, self.mcfg.P)
        return x, {name: getattr(heads, name).astype(np.float32) for name in HEAD_NAMES}

    def clean(self, k):
        if k not in self._cache:
            seg = self.segments[k]
            self._cache[k] = self.render(seg.audio, seg.notes)
        return self._cache[k]

    def augmented(self, k, chain):
        seg = self.segments[k]
        audio, notes = apply_chain(seg.audio, seg.notes, chain)
        return self.render(audio, notes)


def train(tcfg: TrainConfig, mcfg: ModelConfig, data: Sequence, init: Checkpoint | None = None,
          fcfg: FeatureConfig = FeatureConfig(), dcfg: DecodeConfig = DecodeConfig(),
          acfg: AugmentConfig = AugmentConfig(), callback: Callable | None = None,
          log_stream=None) -> Checkpoint:
    """Train from ``init`` (fine-tuning) or from a fresh initialization.

    ``data`` is a sequence of labeled clips. Both arms run the same loop:
    seeded segment sampling, optional augmentation, Adam with cosine
    annealing from step 0. A ``step=<n> lr=<float> loss=<float>`` line with
    the running mean loss goes to ``log_stream`` (stdout by default) every
    ``log_every`` steps; ``callback(step, lr, loss)`` sees every step.
    """
    if init is not None:
        if init.config != mcfg:
            raise ConfigMismatch(f"checkpoint config {init.config} does not match {mcfg}")
        params = init.params.astype(np.float32)
    else:
        params = model_init(mcfg)
    if mcfg.n_mels != fcfg.n_mels:
        raise ConfigMismatch(f"model n_mels={mcfg.n_mels} but features n_mels={fcfg.n_mels}")
    if log_stream is None:
        log_stream = sys.stdout
    source = _SegmentSource(data, tcfg, mcfg, fcfg, dcfg)
    rng = np.random.default_rng(tcfg.seed)
    m = params.zeros_like()
    v = params.zeros_like()
    b1, b2, eps = tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps
    running = 0.0
    for step in range(tcfg.total_steps):
        picks = rng.integers(0, len(source), size=tcfg.batch_size)
        rows, tgts = [], {name: [] for name in HEAD_NAMES}
        for k in picks:
            if tcfg.augment:
                x, t = source.augmented(int(k), sample_chain_params(rng, acfg))
            else:
                x, t = source.clean(int(k))
            rows.append(x)
            for name in HEAD_NAMES:
                tgts[name].append(t[name])
        x = np.concatenate(rows)
        tgts = {name: np.concatenate(tgts[name]) for name in HEAD_NAMES}
        value, grads = _rows_loss_and_grad(params, x, tgts)

        lr = cosine_lr(step, tcfg)
        t = step + 1
        step_size = np.float32(lr / (1.0 - b1 ** t))
        bias2 = np.float32(1.0 - b2 ** t)
        for name, p in params:
            g = grads[name]
            mk, vk = m[name], v[name]
            mk *= np.float32(b1)
            mk += np.float32(1.0 - b1) * g
            vk *= np.float32(b2)
            vk += np.float32(1.0 - b2) * (g * g)
            p -= step_size * mk / (np.sqrt(vk / bias2) + np.float32(eps))

        running += value
        if callback is not None:
            callback(t, lr, value)
        if t % tcfg.log_every == 0 or t == tcfg.total_steps:
            n = t % tcfg.log_every or tcfg.log_every
            print(f"step={t} lr={lr:.6g} loss={running / n:.6f}", file=log_stream, flush=True)
            running = 0.0
    return Checkpoint(mcfg, params, tcfg.total_steps, (m, v))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write magic, u16 version, u32-prefixed config JSON, float32 params,
    u8 moments flag (+ first and second moments), u64 step."""
    cfg_bytes = ckpt.config.to_json().encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(cfg_bytes)), cfg_bytes]
    for _, arr in ckpt.params:
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    if ckpt.moments is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01")
        for moment in ckpt.moments:
            for _, arr in moment:
                parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    parts.append(struct.pack("<Q", ckpt.step))
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFile(f"needed {n} bytes at offset {self.pos}, file has {len(self.raw)}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def arrays(self, cfg: ModelConfig) -> ModelParams:
        arrays = {}
        for name, shape in cfg.param_shapes():
            count = int(np.prod(shape))
            arrays[name] = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        return ModelParams(cfg, arrays)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    r = _Reader(raw)
    magic = r.take(4) if len(raw) >= 4 else raw
    if magic != CHECKPOINT_MAGIC:
        raise BadMagic(f"bad checkpoint magic {magic!r}")
    version, n_json = struct.unpack("<HI", r.take(6))
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        cfg = ModelConfig.from_json(r.take(n_json).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError) as exc:
        raise CheckpointError(f"unreadable model config: {exc}") from exc
    params = r.arrays(cfg)
    flag = r.take(1)
    moments = None
    if flag == b"\x01":
        moments = (r.arrays(cfg), r.arrays(cfg))
    elif flag != b"\x00":
        raise CheckpointError(f"bad moments flag {flag!r}")
    (step,) = struct.unpack("<Q", r.take(8))
    if r.pos != len(raw):
        raise CheckpointError(f"{len(raw) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(cfg, params, step, moments)
