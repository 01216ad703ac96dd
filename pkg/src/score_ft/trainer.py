"""Correspondence fine-tuning loop.

Each update draws a side bit per (original, perturbed) pair, routes one
utterance through the learnable twin and the other through the frozen twin,
scores the projected sequences with the length-normalized soft-DTW
divergence, and takes one AdamW step on the learnable layers and the shared
projection head.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .core import Waveform
from .frontend import MelConfig, load_wav, log_mel, save_wav
from .model import (
    EncoderParams,
    Gradients,
    ProjectionHead,
    backward,
    forward,
    init_encoder,
    init_head,
    save_checkpoint,
)
from .perturb import PerturbConfig, make_perturbed, perturb_rng
from .softdtw import SoftDtwConfig, normalized_divergence

__all__ = [
    "TrainConfig",
    "ModelConfig",
    "StepRecord",
    "AdamW",
    "TrainState",
    "TrainingDivergedError",
    "TrainResult",
    "lr_at",
    "init_state",
    "pair_loss",
    "train_step",
    "run_training",
    "read_metrics",
]

log = logging.getLogger(__name__)

CHECKPOINT_EVERY = 500


@dataclass(frozen=True)
class TrainConfig:
    lr_base: float = 2.0e-5
    warmup_steps: int = 1000
    total_steps: int = 3600
    batch_size: int = 8
    gamma: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 42

    def __post_init__(self):
        if not self.lr_base > 0:
            raise ValueError(f"lr_base must be positive, got {self.lr_base}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(f"warmup_steps must be in [0, total_steps], got {self.warmup_steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must be in [0, 1)")
        if self.adam_eps <= 0 or self.weight_decay < 0:
            raise ValueError("adam_eps must be positive and weight_decay non-negative")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    def scaled_to(self, total_steps: int) -> "TrainConfig":
        """Same recipe over fewer updates; warmup keeps its share of the run."""
        warmup = int(round(self.warmup_steps * total_steps / self.total_steps))
        return replace(self, total_steps=total_steps, warmup_steps=min(warmup, total_steps))


@dataclass(frozen=True)
class ModelConfig:
    dims: Tuple[int, ...] = (40, 64, 64, 64, 64)
    n_frozen: int = 2
    activation: str = "tanh"
    proj_dim: int = 16


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    lr: float
    side_bits: Tuple[int, ...]

    def to_json(self) -> str:
        row = {"step": self.step, "loss": self.loss, "lr": self.lr}
        if len(self.side_bits) == 1:
            row["k"] = self.side_bits[0]
        return json.dumps(row)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``lr_base``, constant afterwards."""
    if not 1 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [1, {cfg.total_steps}]")
    if step >= cfg.warmup_steps:
        return cfg.lr_base
    return cfg.lr_base * step / cfg.warmup_steps


class AdamW:
    """Adam with decoupled weight decay, updating arrays in place."""

    def __init__(self, params: List[np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.params = params
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray], lr: float) -> None:
        if len(grads) != len(self.params):
            raise ValueError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p *= 1.0 - lr * self.weight_decay
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


@dataclass
class TrainState:
    cfg: TrainConfig
    theta: EncoderParams
    phi: EncoderParams
    head: ProjectionHead
    optimizer: AdamW
    rng: np.random.Generator  # side bits
    mel_cfg: MelConfig = MelConfig()
    step: int = 0


def _trainable(theta: EncoderParams, head: ProjectionHead) -> List[np.ndarray]:
    out = []
    for layer in theta.learnable_layers:
        out += [layer.weight, layer.bias]
    return out + [head.weight, head.bias]


def init_state(cfg: TrainConfig, model_cfg: ModelConfig = ModelConfig(),
               mel_cfg: MelConfig = MelConfig()) -> TrainState:
    """Both twins start from the same weights."""
    if model_cfg.dims[0] != mel_cfg.n_mels:
        raise ValueError(f"encoder input dim {model_cfg.dims[0]} != n_mels {mel_cfg.n_mels}")
    init_rng = np.random.default_rng([cfg.seed, 0])
    theta = init_encoder(model_cfg.dims, model_cfg.n_frozen, model_cfg.activation, init_rng)
    head = init_head(model_cfg.dims[-1], model_cfg.proj_dim, init_rng)
    phi = theta.copy()
    opt = AdamW(_trainable(theta, head), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.weight_decay)
    return TrainState(cfg, theta, phi, head, opt, np.random.default_rng([cfg.seed, 1]), mel_cfg)


def pair_loss(state: TrainState, learn_feats, frozen_feats) -> Tuple[float, Gradients]:
    """Divergence between the learnable and frozen branch outputs and its parameter gradients."""
    x, cache_t = forward(state.theta, state.head, learn_feats, learnable=True)
    y, cache_f = forward(state.phi, state.head, frozen_feats, learnable=False)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise FloatingPointError("non-finite branch output")
    value, gx, gy = normalized_divergence(x, y, SoftDtwConfig(state.cfg.gamma))
    grads = backward(state.theta, state.head, cache_t, gx)
    grads += backward(state.phi, state.head, cache_f, gy)  # head only
    return value, grads


def train_step(state: TrainState, batch: Sequence[Tuple[Waveform, Waveform]]) -> StepRecord:
    """One parameter update from a batch of (original, perturbed) pairs.

    A single pair may be passed as ``[(original, perturbed)]``.
    """
    step = state.step + 1
    lr = lr_at(step, state.cfg)
    total, bits = None, []
    losses = []
    for original, perturbed in batch:
        k = int(state.rng.integers(2))
        bits.append(k)
        orig_f = log_mel(original, state.mel_cfg)
        pert_f = log_mel(perturbed, state.mel_cfg)
        learn_f, frozen_f = (pert_f, orig_f) if k == 0 else (orig_f, pert_f)
        try:
            value, grads = pair_loss(state, learn_f, frozen_f)
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss {value}")
        except FloatingPointError as exc:
            raise TrainingDivergedError(
                f"{exc} at step {step} (pair of {len(original)} and {len(perturbed)} samples, k={k})",
                (original, perturbed),
            ) from exc
        losses.append(value)
        if total is None:
            total = grads
        else:
            total += grads
    if total is None:
        raise ValueError("empty batch")
    mean = total.scale(1.0 / len(losses))
    flat = []
    for dw, db in mean.layers:
        flat += [dw, db]
    flat += list(mean.head)
    state.optimizer.step(flat, lr)
    state.step = step
    return StepRecord(step, float(np.mean(losses)), lr, tuple(bits))


@dataclass
class TrainResult:
    state: TrainState
    records: List[StepRecord]
    metrics_path: Path
    checkpoint_path: Path


def _load_manifest_audio(paths, sample_rate):
    audio = []
    for p in paths:
        try:
            audio.append(load_wav(p, expected_rate=sample_rate))
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", p, exc)
    if not audio:
        raise ValueError("no loadable audio in manifest")
    return audio


def run_training(manifest: Sequence, cfg: TrainConfig, perturb_cfg: PerturbConfig, out_dir,
                 mel_cfg: MelConfig = MelConfig(), model_cfg: ModelConfig = ModelConfig()) -> TrainResult:
    """Run ``cfg.total_steps`` updates over the manifest.

    Writes ``metrics.jsonl`` (one row per update), ``step_NNNNNN.sckp``
    every 500 updates and ``final.sckp``. A step checkpoint that would land
    on the last update is folded into ``final.sckp``.
    """
    if not manifest:
        raise ValueError("manifest is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    audio = _load_manifest_audio(manifest, mel_cfg.sample_rate_hz)
    state = init_state(cfg, model_cfg, mel_cfg)
    order_rng = np.random.default_rng([cfg.seed, 2])
    metrics_path = out / "metrics.jsonl"
    records = []
    queue: List[int] = []
    draw = 0
    with open(metrics_path, "w") as metrics:
        while state.step < cfg.total_steps:
            batch = []
            while len(batch) < cfg.batch_size:
                if not queue:
                    queue = list(order_rng.permutation(len(audio)))
                w = audio[queue.pop(0)]
                batch.append((w, make_perturbed(w, perturb_cfg, perturb_rng(perturb_cfg.seed, draw))))
                draw += 1
            try:
                rec = train_step(state, batch)
            except TrainingDivergedError as exc:
                save_wav(exc.pair[0], out / "diverged_original.wav")
                save_wav(exc.pair[1], out / "diverged_perturbed.wav")
                log.error("%s; offending pair written to %s", exc, out)
                raise
            records.append(rec)
            metrics.write(rec.to_json() + "\n")
            if rec.step % CHECKPOINT_EVERY == 0 and rec.step != cfg.total_steps:
                save_checkpoint(out / f"step_{rec.step:06d}.sckp", state.theta, state.phi, state.head)
            if rec.step % 50 == 0:
                log.info("step %d loss %.6f lr %.3g", rec.step, rec.loss, rec.lr)
    ckpt = out / "final.sckp"
    save_checkpoint(ckpt, state.theta, state.phi, state.head)
    return TrainResult(state, records, metrics_path, ckpt)


def read_metrics(path) -> List[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def config_from_dict(cls, data: dict):
    """Build a config dataclass, rejecting unknown keys."""
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    kwargs = dict(data)
    for f in fields(cls):
        if f.name in kwargs and isinstance(kwargs[f.name], list):
            kwargs[f.name] = tuple(kwargs[f.name])
    return cls(**kwargs)
