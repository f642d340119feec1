"""Pretraining: per-window normalization, masked patch-wise MSE, Adam with
linear warmup and cosine decay, and a deterministic training loop.

Determinism contract: batch content depends only on (seed, step index) via
SeedSequence spawn keys, so a resumed run replays the exact batch stream of
an uninterrupted one, and the loss curve for a fixed seed is byte-identical
across reruns.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    CONTEXT_CAPS,
    Corpus,
    TrainingWindow,
    default_mixture,
    sample_training_windows,
    window_length,
)
from .model import ModelConfig, ModelWeights, assemble_patch_inputs, forward
from .tensor import NumericError, Tensor, no_grad, sum_exact

NORMALIZATION_MODES = ("per-window", "none")
SIGMA_FLOOR = 1e-8


class DegenerateBatchError(ValueError):
    """Every token in the batch is masked out of the loss."""


class NonFiniteGradientError(RuntimeError):
    """A parameter gradient went NaN/inf; message names the parameter."""


class TrainingDivergedError(RuntimeError):
    """Training loss went non-finite; checkpoints on disk stay valid."""


class TrainConfigError(ValueError):
    pass


# -- normalization -----------------------------------------------------------


@dataclass(frozen=True)
class ScaleRecord:
    """Reversible per-window standardization: x -> (x - mu) / sigma.

    sigma is already floored at 1e-8, so inversion never divides by zero.
    """

    mu: float
    sigma: float


IDENTITY_SCALE = ScaleRecord(mu=0.0, sigma=1.0)


def normalize_window(values: np.ndarray, mode: str = "per-window") -> tuple[np.ndarray, ScaleRecord]:
    """Standardize a context span and return the record that undoes it."""
    if mode not in NORMALIZATION_MODES:
        raise TrainConfigError(f"unknown normalization mode {mode!r}")
    values = np.asarray(values, dtype=np.float64)
    if mode == "none":
        return values.copy(), IDENTITY_SCALE
    mu = float(values.mean())
    sigma = max(float(values.std()), SIGMA_FLOOR)
    rec = ScaleRecord(mu=mu, sigma=sigma)
    return (values - mu) / sigma, rec


def apply_scale(values: np.ndarray, rec: ScaleRecord) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) - rec.mu) / rec.sigma


def invert_scale(values: np.ndarray, rec: ScaleRecord) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * rec.sigma + rec.mu


# -- loss ---------------------------------------------------------------------


def train_loss(forecasts, targets, mask) -> Tensor:
    """Mean over active tokens of the per-token h-step MSE.

    forecasts/targets are [.., N, h]; mask is [.., N] with 1 for tokens
    whose full target lies inside the window. The final reduction uses
    exactly rounded summation, so the value is invariant under permuting
    windows within a batch.
    """
    f = forecasts if isinstance(forecasts, Tensor) else Tensor(forecasts)
    t = targets if isinstance(targets, Tensor) else Tensor(np.asarray(targets, dtype=np.float64))
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if f.shape != t.shape:
        raise ValueError(f"forecasts {f.shape} and targets {t.shape} disagree")
    if m.shape != f.shape[:-1]:
        raise ValueError(f"mask {m.shape} does not cover tokens {f.shape[:-1]}")
    active = float(m.sum())
    if active <= 0:
        raise DegenerateBatchError("all tokens are masked; no loss terms remain")
    h = f.shape[-1]
    diff = f - t
    weighted = diff * diff * Tensor(np.broadcast_to(m[..., None], f.shape).copy())
    return sum_exact(weighted) * (1.0 / (h * active))


def token_loss_mask(window_len: int, patch_len: int, horizon: int) -> np.ndarray:
    """1.0 for tokens j (1-based) with p*j + h <= window length, else 0."""
    n = window_len // patch_len
    j = np.arange(1, n + 1)
    return (j * patch_len + horizon <= window_len).astype(np.float64)


# -- optimizer ------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_weights(cls, weights: ModelWeights) -> "AdamState":
        return cls(m={n: np.zeros_like(p.data) for n, p in weights.named()},
                   v={n: np.zeros_like(p.data) for n, p in weights.named()})


def global_grad_norm(weights: ModelWeights) -> float:
    total = math.fsum(float(np.sum(p.grad * p.grad))
                      for _, p in weights.named() if p.grad is not None)
    return math.sqrt(total)


def adam_step(weights: ModelWeights, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              clip_norm: float | None = 1.0) -> float:
    """One bias-corrected Adam update in place; returns the pre-clip norm."""
    for name, p in weights.named():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NonFiniteGradientError(f"non-finite gradient in parameter {name}")
    norm = global_grad_norm(weights)
    scale = 1.0
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in weights.named():
        g = (p.grad if p.grad is not None else np.zeros_like(p.data)) * scale
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return norm


def lr_at(step: int, base_lr: float, total_steps: int, warmup_frac: float = 0.05,
          cosine: bool = True) -> float:
    """Learning rate for a 1-based step: linear warmup then cosine decay to 0."""
    warmup = max(1, int(round(warmup_frac * total_steps)))
    if step <= warmup:
        return base_lr * step / warmup
    if not cosine or total_steps == warmup:
        return base_lr
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


# -- batch assembly -----------------------------------------------------------------


def assemble_batch(windows, cfg: ModelConfig, normalization: str):
    """Windows (equal length) -> (inputs [B,N,w], targets [B,N,h], mask [B,N]).

    The scale record comes from the model-visible span (window minus its
    final h points); inputs and targets are standardized with the same
    record. Tokens are only built where the full h-step target fits, so the
    mask is all ones by construction.
    """
    p, h = cfg.input_patch_len, cfg.output_patch_len
    w_len = len(windows[0].values)
    n_tok = (w_len - h) // p
    if n_tok < 1:
        raise DegenerateBatchError(f"window of {w_len} points fits no token with a {h}-step target")
    offset = w_len - h - n_tok * p  # oldest points dropped
    inputs, targets = [], []
    for w in windows:
        if len(w.values) != w_len:
            raise ValueError("windows in a batch must share one length")
        normed_ctx, rec = normalize_window(w.values[:w_len - h], normalization)
        normed = apply_scale(w.values, rec)
        token_span = normed[offset:offset + n_tok * p]
        feats = w.features[offset:offset + n_tok * p] if cfg.feature_dim else None
        inputs.append(assemble_patch_inputs(token_span, feats, cfg))
        tails = np.lib.stride_tricks.sliding_window_view(normed, h)
        targets.append(tails[offset + p::p][:n_tok])
    return (np.stack(inputs), np.stack(targets), np.ones((len(windows), n_tok)))


# -- train loop ------------------------------------------------------------------------


@dataclass
class TrainConfig:
    total_steps: int = 1000
    batch_size: int = 32
    base_lr: float = 3e-3
    warmup_frac: float = 0.05
    cosine: bool = True
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    normalization: str = "per-window"
    mixture: dict[str, float] | None = None
    checkpoint_every: int = 0  # 0: only the final checkpoint
    val_every: int = 100  # 0: never compute validation loss
    val_windows: int = 32

    def __post_init__(self):
        if self.total_steps < 1:
            raise TrainConfigError("total_steps must be >= 1")
        if self.batch_size < 1:
            raise TrainConfigError("batch_size must be >= 1")
        if self.normalization not in NORMALIZATION_MODES:
            raise TrainConfigError(f"unknown normalization mode {self.normalization!r}")
        if not 0.0 <= self.warmup_frac <= 1.0:
            raise TrainConfigError("warmup_frac must be in [0, 1]")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise TrainConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    weights: ModelWeights
    model_config: ModelConfig
    loss_curve: list[tuple[int, float, float | None]]
    final_checkpoint: Path | None
    checkpoints: list[Path] = field(default_factory=list)


def rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def _fixed_val_windows(corpus: Corpus, cfg: ModelConfig, limit: int):
    """Deterministic validation windows: the tail of each val split."""
    p, h = cfg.input_patch_len, cfg.output_patch_len
    out = []
    for s in sorted(corpus.series, key=lambda s: s.series_id):
        if len(s) < 10:
            continue
        bounds = s.split()
        val_len = bounds.val_end - bounds.train_end
        if val_len < p + h:
            continue
        w_len = window_length(val_len, CONTEXT_CAPS[s.granularity], h)
        start = bounds.val_end - w_len
        out.append(TrainingWindow(
            series_id=s.series_id, granularity=s.granularity, start=start,
            values=s.values[start:start + w_len],
            features=s.date_features()[start:start + w_len]))
        if len(out) >= limit:
            break
    return out


def _val_loss(val_windows, weights, model_cfg, normalization) -> float | None:
    if not val_windows:
        return None
    losses = []
    with no_grad():
        for w in val_windows:
            inputs, targets, mask = assemble_batch([w], model_cfg, normalization)
            out = forward(weights, model_cfg, inputs)
            losses.append(train_loss(out, targets, mask).item())
    return math.fsum(losses) / len(losses)


def write_loss_curve(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "train_loss", "val_loss"])
        for step, tr, val in curve:
            writer.writerow([step, repr(float(tr)), "" if val is None else repr(float(val))])


def _state_path(ckpt_path: Path) -> Path:
    return ckpt_path.with_name(ckpt_path.name.replace("ckpt_", "state_", 1))


def _save_train_state(path: Path, state: AdamState) -> None:
    arrays = {f"m/{n}": a for n, a in state.m.items()}
    arrays.update({f"v/{n}": a for n, a in state.v.items()})
    np.savez(path, step=np.asarray(state.step), **arrays)


def _load_train_state(path: Path, weights: ModelWeights) -> AdamState:
    with np.load(path) as archive:
        step = int(archive["step"])
        m = {n: archive[f"m/{n}"] for n, _ in weights.named()}
        v = {n: archive[f"v/{n}"] for n, _ in weights.named()}
    return AdamState(m=m, v=v, step=step)


def train(corpus: Corpus, model_cfg: ModelConfig, cfg: TrainConfig,
          out_dir=None, resume_from=None) -> TrainResult:
    """Run the pretraining loop over a corpus.

    Writes ``ckpt_*.npz``/``state_*.npz`` pairs plus ``loss_curve.csv``
    under ``out_dir`` when given. ``resume_from`` takes a checkpoint path
    written by an earlier run and continues from its recorded step with the
    identical batch stream.
    """
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    p, h = model_cfg.input_patch_len, model_cfg.output_patch_len
    mixture = cfg.mixture if cfg.mixture is not None else default_mixture(corpus, p, h)

    if resume_from is not None:
        bundle = load_checkpoint(resume_from)
        if bundle.config != model_cfg:
            raise TrainConfigError("resume checkpoint was trained with a different model config")
        weights = bundle.weights
        state = _load_train_state(_state_path(Path(resume_from)), weights)
        start_step = int(bundle.extra.get("step", state.step))
    else:
        weights = ModelWeights.initialize(model_cfg, seed=cfg.seed)
        state = AdamState.for_weights(weights)
        start_step = 0

    val_windows = _fixed_val_windows(corpus, model_cfg, cfg.val_windows) if cfg.val_every else []
    extra_base = {"normalization": cfg.normalization, "train_seed": cfg.seed}
    curve: list[tuple[int, float, float | None]] = []
    checkpoints: list[Path] = []

    for step in range(start_step + 1, cfg.total_steps + 1):
        rng = rng_for(cfg.seed, 1, step)
        windows = sample_training_windows(corpus, mixture, cfg.batch_size, rng,
                                          input_patch_len=p, output_patch_len=h)
        inputs, targets, mask = assemble_batch(windows, model_cfg, cfg.normalization)
        weights.zero_grads()
        drop_rng = rng_for(cfg.seed, 3, step) if model_cfg.dropout > 0 else None
        try:
            out = forward(weights, model_cfg, Tensor(inputs), train_mode=True, rng=drop_rng)
            loss = train_loss(out, targets, mask)
            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise TrainingDivergedError(
                    f"training loss became non-finite at step {step}; "
                    f"last good checkpoint kept on disk")
            loss.backward()
        except NumericError as exc:
            raise TrainingDivergedError(
                f"activations became non-finite at step {step}; "
                f"last good checkpoint kept on disk") from exc
        adam_step(weights, state, lr_at(step, cfg.base_lr, cfg.total_steps,
                                        cfg.warmup_frac, cfg.cosine),
                  beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, clip_norm=cfg.clip_norm)
        val = None
        if cfg.val_every and step % cfg.val_every == 0:
            val = _val_loss(val_windows, weights, model_cfg, cfg.normalization)
        curve.append((step, loss_value, val))
        if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            ckpt = out_dir / f"ckpt_step{step:06d}.npz"
            save_checkpoint(ckpt, model_cfg, weights, extra={**extra_base, "step": step})
            _save_train_state(_state_path(ckpt), state)
            checkpoints.append(ckpt)

    final = None
    if out_dir is not None:
        final = out_dir / "ckpt_final.npz"
        save_checkpoint(final, model_cfg, weights,
                        extra={**extra_base, "step": cfg.total_steps})
        _save_train_state(_state_path(final), state)
        write_loss_curve(out_dir / "loss_curve.csv", curve)
    return TrainResult(weights=weights, model_config=model_cfg, loss_curve=curve,
                       final_checkpoint=final, checkpoints=checkpoints)
