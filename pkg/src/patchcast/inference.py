"""Zero-shot autoregressive forecasting.

A trained model emits output_patch_len points per round; longer horizons are
covered by feeding each round's (still-normalized) predictions back as
context and re-tokenizing, for ceil(horizon / output_patch_len) rounds.
Normalization statistics are computed once from the original context (after
the capacity clamp) and reused for every round and for the final inversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ContextTooShortError, ModelConfig, ModelWeights, assemble_patch_inputs, forward
from .tensor import no_grad
from .training import ScaleRecord, invert_scale, normalize_window

__all__ = [
    "ForecastError",
    "HorizonError",
    "ForecastResult",
    "autoregressive_rounds",
    "forecast",
]


class ForecastError(ValueError):
    pass


class HorizonError(ForecastError):
    pass


@dataclass
class ForecastResult:
    values: np.ndarray       # [horizon] forecast on the original scale
    rounds: int              # autoregressive rounds taken
    round_index: np.ndarray  # [horizon] round that produced each step
    scale: ScaleRecord       # record used to normalize context / invert output


def autoregressive_rounds(horizon: int, output_patch_len: int) -> int:
    """Rounds needed to cover a horizon h steps at a time."""
    return -(-horizon // output_patch_len)


def forecast(weights: ModelWeights, cfg: ModelConfig, values, horizon: int, *,
             features=None, normalization: str = "per-window") -> ForecastResult:
    """Forecast `horizon` future points from a 1-d context.

    `features` covers the context and the forecast span: shape
    [len(values) + horizon, feature_dim], or None to mark every calendar
    column unavailable. Contexts longer than input_patch_len * max_positions
    are clamped to their most recent points, and the working window keeps
    sliding under that cap as predictions are appended.
    """
    if isinstance(horizon, bool) or not isinstance(horizon, (int, np.integer)):
        raise HorizonError(f"horizon must be an integer, got {horizon!r}")
    if horizon < 1:
        raise HorizonError(f"horizon must be >= 1, got {horizon}")
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ForecastError(f"context must be 1-d, got shape {values.shape}")
    if not np.isfinite(values).all():
        raise ForecastError("context contains non-finite values")
    p, h = cfg.input_patch_len, cfg.output_patch_len
    if len(values) < p:
        raise ContextTooShortError(
            f"context of {len(values)} points is shorter than one {p}-point patch")

    if cfg.feature_dim == 0:
        if features is not None:
            raise ForecastError("model takes no calendar features, but features were given")
    elif features is not None:
        features = np.asarray(features, dtype=np.float64)
        want = (len(values) + int(horizon), cfg.feature_dim)
        if features.shape != want:
            raise ForecastError(
                f"features shape {features.shape} does not match context+horizon {want}")

    cap_points = p * cfg.max_positions
    if len(values) > cap_points:
        drop = len(values) - cap_points
        values = values[drop:]
        if features is not None:
            features = features[drop:]

    normed, rec = normalize_window(values, normalization)
    rounds = autoregressive_rounds(int(horizon), h)
    work = normed
    preds = []
    with no_grad():
        for _ in range(rounds):
            cur = work[-cap_points:] if len(work) > cap_points else work
            if features is None:
                feats_cur = None
            else:
                end = len(work)
                feats_cur = features[end - len(cur):end]
            out = forward(weights, cfg, assemble_patch_inputs(cur, feats_cur, cfg))
            step = out.data[-1]  # last token: the h points after the context
            preds.append(step)
            work = np.concatenate([work, step])
    normed_pred = np.concatenate(preds)[:horizon]
    return ForecastResult(values=invert_scale(normed_pred, rec),
                          rounds=rounds,
                          round_index=np.arange(int(horizon)) // h,
                          scale=rec)
