"""Decoder-only transformer over time-series patches.

The context is cut into non-overlapping patches of ``input_patch_len``
points. Each patch, concatenated with its flattened per-point date
features, passes through an input residual block and picks up a sinusoidal
positional encoding to become one token. A stack of causally masked
pre-norm transformer layers maps the token sequence to output tokens, and
an output residual block turns every output token j into a forecast of the
``output_patch_len`` points immediately following patch j.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import tensor as tt
from .tensor import Tensor

MASK_VALUE = -1e30


class ConfigError(ValueError):
    """Model configuration violates a structural constraint."""


class CapacityError(ValueError):
    """Token count exceeds the positional-encoding capacity."""


class ContextTooShortError(ValueError):
    """Fewer context points than one input patch."""


class FeatureShapeError(ValueError):
    """Date-feature matrix does not line up with the values."""


@dataclass
class ModelConfig:
    input_patch_len: int = 4
    output_patch_len: int = 8
    model_dim: int = 32
    num_layers: int = 2
    num_heads: int = 2
    feature_dim: int = 5
    residual_hidden: int = 32
    ffn_hidden: int | None = None  # pinned equal to model_dim
    max_positions: int = 256
    dropout: float = 0.0

    def __post_init__(self):
        if self.ffn_hidden is None:
            self.ffn_hidden = self.model_dim
        positive = ("input_patch_len", "output_patch_len", "model_dim", "num_layers",
                    "num_heads", "residual_hidden", "max_positions")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.feature_dim < 0:
            raise ConfigError(f"feature_dim must be >= 0, got {self.feature_dim}")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}")
        if self.model_dim % 2 != 0:
            raise ConfigError(f"model_dim must be even for the sinusoidal encoding, got {self.model_dim}")
        if self.ffn_hidden != self.model_dim:
            raise ConfigError(
                f"ffn_hidden is pinned to model_dim ({self.model_dim}), got {self.ffn_hidden}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def input_width(self) -> int:
        return self.input_patch_len * (1 + self.feature_dim)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def preset(cls, name: str, **overrides) -> "ModelConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
        if not overrides:
            return PRESETS[name]
        if "model_dim" in overrides and "ffn_hidden" not in overrides:
            overrides["ffn_hidden"] = None  # re-pin to the new model_dim
        return replace(PRESETS[name], **overrides)


PRESETS = {
    # tiny CPU-friendly configuration used throughout the test suite
    "desk": ModelConfig(input_patch_len=4, output_patch_len=8, model_dim=32,
                        num_layers=2, num_heads=2, feature_dim=5,
                        residual_hidden=32, max_positions=256),
    # production-scale architecture numbers; never trained here
    "full": ModelConfig(input_patch_len=32, output_patch_len=128, model_dim=1280,
                        num_layers=20, num_heads=16, feature_dim=5,
                        residual_hidden=1280, max_positions=64),
}


# -- weights -----------------------------------------------------------------


def weight_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape map; defines checkpoint layout and ordering."""
    w_in, d, rh, h = cfg.input_width, cfg.model_dim, cfg.residual_hidden, cfg.output_patch_len
    shapes: dict[str, tuple[int, ...]] = {
        "input.w1": (w_in, rh), "input.b1": (rh,),
        "input.w2": (rh, d), "input.b2": (d,),
    }
    if w_in != d:
        shapes["input.wskip"] = (w_in, d)
    for i in range(cfg.num_layers):
        lp = f"layer{i}"
        shapes[f"{lp}.ln1.gain"] = (d,)
        shapes[f"{lp}.ln1.bias"] = (d,)
        for proj in ("wq", "wk", "wv", "wo"):
            shapes[f"{lp}.attn.{proj}"] = (d, d)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[f"{lp}.attn.{b}"] = (d,)
        shapes[f"{lp}.ln2.gain"] = (d,)
        shapes[f"{lp}.ln2.bias"] = (d,)
        shapes[f"{lp}.ffn.w1"] = (d, cfg.ffn_hidden)
        shapes[f"{lp}.ffn.b1"] = (cfg.ffn_hidden,)
        shapes[f"{lp}.ffn.w2"] = (cfg.ffn_hidden, d)
        shapes[f"{lp}.ffn.b2"] = (d,)
    shapes["output.w1"] = (d, rh)
    shapes["output.b1"] = (rh,)
    shapes["output.w2"] = (rh, h)
    shapes["output.b2"] = (h,)
    if d != h:
        shapes["output.wskip"] = (d, h)
    return shapes


class ModelWeights:
    """Named parameter store; every entry is a gradient-tracked Tensor."""

    def __init__(self, params: dict[str, Tensor]):
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def get(self, name: str) -> Tensor | None:
        return self.params.get(name)

    def named(self):
        return self.params.items()

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def count(self) -> int:
        return sum(p.size for p in self.params.values())

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    @classmethod
    def initialize(cls, cfg: ModelConfig, seed: int) -> "ModelWeights":
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(101,)))
        params: dict[str, Tensor] = {}
        for name, shape in weight_shapes(cfg).items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf in ("b1", "b2", "bq", "bk", "bv", "bo", "bias"):
                data = np.zeros(shape)
            elif leaf == "gain":
                data = np.ones(shape)
            elif leaf == "w1":  # feeds a relu
                data = rng.normal(0.0, math.sqrt(2.0 / shape[0]), size=shape)
            else:
                data = rng.normal(0.0, math.sqrt(1.0 / shape[0]), size=shape)
            params[name] = Tensor(data, requires_grad=True)
        return cls(params)

    @classmethod
    def from_arrays(cls, cfg: ModelConfig, arrays: dict[str, np.ndarray]) -> "ModelWeights":
        expected = weight_shapes(cfg)
        missing = set(expected) - set(arrays)
        extra = set(arrays) - set(expected)
        if missing or extra:
            raise ConfigError(f"weight set mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        params = {}
        for name, shape in expected.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ConfigError(f"weight {name} has shape {arr.shape}, expected {shape}")
            params[name] = Tensor(arr, requires_grad=True)
        return cls(params)


# -- tokenization ------------------------------------------------------------


def patchify(values: np.ndarray, patch_len: int) -> np.ndarray:
    """Cut a 1-d series into consecutive patches, newest data preserved.

    When the length is not a multiple of ``patch_len`` the oldest remainder
    is dropped, so the final patch always ends at the final point.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ContextTooShortError(f"patchify expects a 1-d series, got shape {values.shape}")
    n = values.size // patch_len
    if n < 1:
        raise ContextTooShortError(
            f"context of {values.size} points is shorter than one patch ({patch_len})")
    return values[values.size - n * patch_len:].reshape(n, patch_len)


def assemble_patch_inputs(values: np.ndarray, features: np.ndarray | None,
                          cfg: ModelConfig) -> np.ndarray:
    """Build the per-token input rows: flattened patch ++ flattened features.

    ``features`` holds one row of ``feature_dim`` values per point of
    ``values``; None stands for all-masked (-1) features. Returns an array
    of shape [num_patches, input_width].
    """
    patches = patchify(values, cfg.input_patch_len)
    n = patches.shape[0]
    if cfg.feature_dim == 0:
        return patches
    length = np.asarray(values).size
    if features is None:
        feat = np.full((length, cfg.feature_dim), -1.0)
    else:
        feat = np.asarray(features, dtype=np.float64)
        if feat.shape != (length, cfg.feature_dim):
            raise FeatureShapeError(
                f"features shape {feat.shape} does not match ({length}, {cfg.feature_dim})")
    feat = feat[length - n * cfg.input_patch_len:]
    flat = feat.reshape(n, cfg.input_patch_len * cfg.feature_dim)
    return np.concatenate([patches, flat], axis=1)


def positional_encoding(n_positions: int, dim: int) -> np.ndarray:
    """Sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/dim)), odd cols cos."""
    pos = np.arange(n_positions, dtype=np.float64)[:, None]
    i = np.arange(dim // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.zeros((n_positions, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table


# -- blocks -------------------------------------------------------------------


def residual_block(v: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
                   wskip: Tensor | None) -> Tensor:
    """out = w2 @ relu(w1 @ v + b1) + b2 + skip(v).

    The skip path is the identity when input and output widths agree
    (wskip None) and a learned linear map otherwise. Accepts a single
    vector or any stack of them.
    """
    single = v.ndim == 1
    if single:
        v = tt.reshape(v, (1, v.shape[0]))
    hidden = tt.relu(v @ w1 + b1)
    out = hidden @ w2 + b2
    skip = v if wskip is None else v @ wskip
    out = out + skip
    return tt.reshape(out, (out.shape[-1],)) if single else out


def _causal_mask(n: int) -> np.ndarray:
    mask = np.zeros((n, n))
    mask[np.triu_indices(n, k=1)] = MASK_VALUE
    return mask


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


def input_tokens(inputs, weights: ModelWeights, cfg: ModelConfig) -> Tensor:
    """Patch rows [.., N, input_width] -> tokens [.., N, model_dim] with PE added."""
    x = inputs if isinstance(inputs, Tensor) else Tensor(np.asarray(inputs, dtype=np.float64))
    if x.ndim < 2 or x.shape[-1] != cfg.input_width:
        raise FeatureShapeError(
            f"patch inputs shape {x.shape} does not end in input_width {cfg.input_width}")
    n = x.shape[-2]
    if n > cfg.max_positions:
        raise CapacityError(f"{n} tokens exceed max_positions {cfg.max_positions}")
    tokens = residual_block(x, weights["input.w1"], weights["input.b1"],
                            weights["input.w2"], weights["input.b2"],
                            weights.get("input.wskip"))
    return tokens + Tensor(positional_encoding(n, cfg.model_dim))


def stacked_transformer(tokens: Tensor, weights: ModelWeights, cfg: ModelConfig,
                        train_mode: bool = False,
                        rng: np.random.Generator | None = None) -> Tensor:
    """Causally masked pre-norm stack: x += MHA(LN(x)); x += FFN(LN(x))."""
    n, d = tokens.shape[-2], tokens.shape[-1]
    if n > cfg.max_positions:
        raise CapacityError(f"{n} tokens exceed max_positions {cfg.max_positions}")
    nh, dh = cfg.num_heads, d // cfg.num_heads
    batch_shape = tokens.shape[:-2]
    mask = Tensor(_causal_mask(n))
    drop_rng = rng if (train_mode and cfg.dropout > 0.0) else None
    x = tokens
    for i in range(cfg.num_layers):
        lp = f"layer{i}"
        normed = tt.layer_norm(x, weights[f"{lp}.ln1.gain"], weights[f"{lp}.ln1.bias"])
        q = normed @ weights[f"{lp}.attn.wq"] + weights[f"{lp}.attn.bq"]
        k = normed @ weights[f"{lp}.attn.wk"] + weights[f"{lp}.attn.bk"]
        v = normed @ weights[f"{lp}.attn.wv"] + weights[f"{lp}.attn.bv"]
        split = batch_shape + (n, nh, dh)
        axes_in = tuple(range(len(batch_shape))) + (len(batch_shape) + 1, len(batch_shape), len(batch_shape) + 2)
        q = tt.transpose(tt.reshape(q, split), axes_in)
        k = tt.transpose(tt.reshape(k, split), axes_in)
        v = tt.transpose(tt.reshape(v, split), axes_in)
        kt_axes = tuple(range(len(batch_shape) + 1)) + (len(batch_shape) + 2, len(batch_shape) + 1)
        scores = (q @ tt.transpose(k, kt_axes)) * (1.0 / math.sqrt(dh)) + mask
        probs = _dropout(tt.softmax_lastdim(scores), cfg.dropout, drop_rng)
        ctx = tt.transpose(probs @ v, axes_in)
        ctx = tt.reshape(ctx, batch_shape + (n, d))
        x = x + (ctx @ weights[f"{lp}.attn.wo"] + weights[f"{lp}.attn.bo"])
        normed = tt.layer_norm(x, weights[f"{lp}.ln2.gain"], weights[f"{lp}.ln2.bias"])
        hidden = _dropout(tt.relu(normed @ weights[f"{lp}.ffn.w1"] + weights[f"{lp}.ffn.b1"]),
                          cfg.dropout, drop_rng)
        x = x + (hidden @ weights[f"{lp}.ffn.w2"] + weights[f"{lp}.ffn.b2"])
    return x


def output_forecasts(out_tokens: Tensor, weights: ModelWeights, cfg: ModelConfig) -> Tensor:
    """Output tokens [.., N, model_dim] -> per-token h-step forecasts [.., N, h]."""
    return residual_block(out_tokens, weights["output.w1"], weights["output.b1"],
                          weights["output.w2"], weights["output.b2"],
                          weights.get("output.wskip"))


def forward(weights: ModelWeights, cfg: ModelConfig, inputs,
            train_mode: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Assembled patch inputs [.., N, input_width] -> forecasts [.., N, h].

    Row j depends only on patches 1..j; it is the model's prediction of the
    output_patch_len points immediately after patch j.
    """
    toks = input_tokens(inputs, weights, cfg)
    out = stacked_transformer(toks, weights, cfg, train_mode=train_mode, rng=rng)
    return output_forecasts(out, weights, cfg)
