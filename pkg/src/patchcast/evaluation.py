"""Normalized forecast metrics, the rolling-window evaluation protocol,
naive reference predictors, and ablation tables.

A predictor is any callable (context_values, horizon, features) -> [horizon]
array; the trained model and the naive baselines all conform, so every
comparison runs through the identical protocol.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Corpus, TimeSeries
from .inference import autoregressive_rounds, forecast
from .model import ModelConfig, ModelWeights
from .training import TrainConfig, train


class MetricError(ValueError):
    pass


class EvalConfigError(ValueError):
    pass


class SeasonFallbackWarning(UserWarning):
    """Season longer than the available context; fell back to repeat-last."""


# -- metrics ---------------------------------------------------------------------


def _pair(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape or a.ndim != 1 or a.size == 0:
        raise MetricError(f"need equal non-empty 1-d arrays, got {a.shape} and {p.shape}")
    return a, p


def mse(actual, predicted) -> float:
    a, p = _pair(actual, predicted)
    return float(np.mean((a - p) ** 2))


def nrmse(actual, predicted) -> float:
    """Root-mean-squared error over the mean absolute actual value."""
    a, p = _pair(actual, predicted)
    denom = float(np.mean(np.abs(a)))
    if denom == 0.0:
        raise MetricError("all actual values are zero; normalized error is undefined")
    return math.sqrt(mse(a, p)) / denom


def wape(actual, predicted) -> float:
    """Sum of absolute errors over the sum of absolute actual values."""
    a, p = _pair(actual, predicted)
    denom = float(np.sum(np.abs(a)))
    if denom == 0.0:
        raise MetricError("all actual values are zero; normalized error is undefined")
    return float(np.sum(np.abs(a - p))) / denom


# -- reference predictors -----------------------------------------------------------


def repeat_last(values, horizon: int, features=None) -> np.ndarray:
    """Persistence: every future step equals the final observed value."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise MetricError("repeat-last needs at least one context point")
    return np.full(int(horizon), values[-1])


def make_seasonal_naive(season: int):
    """Predictor repeating the final season of the context.

    When the context is shorter than one season there is nothing to repeat:
    the predictor warns and degrades to repeat-last.
    """
    if season < 1:
        raise EvalConfigError(f"season must be >= 1, got {season}")

    def predictor(values, horizon: int, features=None) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if len(values) < season:
            warnings.warn(
                f"context of {len(values)} points is shorter than season {season}; "
                f"using repeat-last instead", SeasonFallbackWarning, stacklevel=2)
            return repeat_last(values, horizon)
        cycle = values[-season:]
        reps = -(-int(horizon) // season)
        return np.tile(cycle, reps)[:int(horizon)]

    return predictor


def make_model_predictor(weights: ModelWeights, cfg: ModelConfig,
                         normalization: str = "per-window"):
    """Adapt a trained model to the (values, horizon, features) protocol."""

    def predictor(values, horizon: int, features=None) -> np.ndarray:
        feats = features if cfg.feature_dim else None
        return forecast(weights, cfg, values, int(horizon),
                        features=feats, normalization=normalization).values

    return predictor


# -- rolling-window protocol -----------------------------------------------------------


@dataclass(frozen=True)
class WindowScore:
    origin: int  # first forecast step, as an index into the series
    nrmse: float
    wape: float


@dataclass
class EvalReport:
    series_id: str
    context_len: int
    horizon: int
    stride: int
    windows: list[WindowScore] = field(default_factory=list)
    excluded: int = 0  # zero-denominator windows left out of the pool

    @property
    def n_windows(self) -> int:
        return len(self.windows)

    @property
    def pooled_nrmse(self) -> float:
        if not self.windows:
            return math.nan
        return math.fsum(w.nrmse for w in self.windows) / len(self.windows)

    @property
    def pooled_wape(self) -> float:
        if not self.windows:
            return math.nan
        return math.fsum(w.wape for w in self.windows) / len(self.windows)

    def to_json_dict(self) -> dict:
        pooled_n, pooled_w = self.pooled_nrmse, self.pooled_wape
        return {
            "series_id": self.series_id,
            "context_len": self.context_len,
            "horizon": self.horizon,
            "stride": self.stride,
            "n_windows": self.n_windows,
            "excluded": self.excluded,
            "pooled_nrmse": None if math.isnan(pooled_n) else pooled_n,
            "pooled_wape": None if math.isnan(pooled_w) else pooled_w,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("origin,nrmse,wape\n")
            for w in self.windows:
                fh.write(f"{w.origin},{w.nrmse!r},{w.wape!r}\n")


def rolling_eval(predictor, series: TimeSeries, context_len: int, horizon: int,
                 stride: int = 1) -> EvalReport:
    """Score a predictor over every forecast window inside the test split.

    Forecast origins start at the first test point and advance by `stride`
    while a full horizon still fits. The context is the `context_len` points
    before the origin (clipped at the series start, so it may reach back into
    the train and validation spans). Windows whose actuals are all zero have
    no defined normalized error; they are excluded and counted.
    """
    if context_len < 1:
        raise EvalConfigError(f"context_len must be >= 1, got {context_len}")
    if horizon < 1:
        raise EvalConfigError(f"horizon must be >= 1, got {horizon}")
    if stride < 1:
        raise EvalConfigError(f"stride must be >= 1, got {stride}")
    bounds = series.split()
    total = len(series)
    origins = range(bounds.val_end, total - horizon + 1, stride)
    if not origins:
        raise EvalConfigError(
            f"test split of {total - bounds.val_end} points fits no "
            f"{horizon}-step forecast window for series {series.series_id}")
    feats_all = series.date_features()
    report = EvalReport(series_id=series.series_id, context_len=context_len,
                        horizon=horizon, stride=stride)
    for origin in origins:
        ctx_start = max(0, origin - context_len)
        ctx = series.values[ctx_start:origin]
        actual = series.values[origin:origin + horizon]
        if float(np.sum(np.abs(actual))) == 0.0:
            report.excluded += 1
            continue
        feats = feats_all[ctx_start:origin + horizon]
        predicted = np.asarray(predictor(ctx, horizon, feats), dtype=np.float64)
        if predicted.shape != (horizon,):
            raise EvalConfigError(
                f"predictor returned shape {predicted.shape}, wanted ({horizon},)")
        report.windows.append(WindowScore(origin=origin,
                                          nrmse=nrmse(actual, predicted),
                                          wape=wape(actual, predicted)))
    return report


def pooled_over_series(predictor, series_list, context_len: int, horizon: int,
                       stride: int = 1) -> dict:
    """Uniform mean over every scored window of every series."""
    scores: list[WindowScore] = []
    excluded = 0
    for s in series_list:
        rep = rolling_eval(predictor, s, context_len, horizon, stride)
        scores.extend(rep.windows)
        excluded += rep.excluded
    return {
        "n_windows": len(scores),
        "excluded": excluded,
        "nrmse": math.fsum(w.nrmse for w in scores) / len(scores) if scores else math.nan,
        "wape": math.fsum(w.wape for w in scores) / len(scores) if scores else math.nan,
    }


# -- ablation suites -------------------------------------------------------------------


def context_sweep(weights: ModelWeights, cfg: ModelConfig, series_list,
                  context_lengths, horizon: int, stride: int = 1,
                  normalization: str = "per-window") -> list[dict]:
    """Same trained model scored at several context lengths."""
    predictor = make_model_predictor(weights, cfg, normalization)
    rows = []
    for c in context_lengths:
        pooled = pooled_over_series(predictor, series_list, c, horizon, stride)
        rows.append({"context_len": int(c), **pooled})
    return rows


def patch_size_comparison(corpus: Corpus, eval_series, base_model: ModelConfig,
                          train_cfg: TrainConfig, which: str, sizes,
                          context_len: int, horizon: int, stride: int = 1) -> list[dict]:
    """Retrain the model per patch-size variant and score each on the same
    evaluation series. `which` picks the varied side: "input" or "output"."""
    if which not in ("input", "output"):
        raise EvalConfigError(f'which must be "input" or "output", got {which!r}')
    fname = "input_patch_len" if which == "input" else "output_patch_len"
    rows = []
    for size in sizes:
        model_cfg = replace(base_model, **{fname: int(size)})
        result = train(corpus, model_cfg, train_cfg)
        predictor = make_model_predictor(result.weights, model_cfg,
                                         train_cfg.normalization)
        pooled = pooled_over_series(predictor, eval_series, context_len, horizon, stride)
        row = {fname: int(size), **pooled}
        if which == "output":
            row["rounds"] = autoregressive_rounds(horizon, int(size))
        rows.append(row)
    return rows


def _render_table(headers, rows_of_cells) -> str:
    widths = [max(len(h), *(len(c) for c in col)) if rows_of_cells else len(h)
              for h, col in zip(headers, zip(*rows_of_cells))] if rows_of_cells \
        else [len(h) for h in headers]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines.extend(fmt(r) for r in rows_of_cells)
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def format_context_sweep_table(rows) -> str:
    headers = ["context_len", "n_windows", "excluded", "nrmse", "wape"]
    return _render_table(headers, [[_cell(r[h]) for h in headers] for r in rows])


def format_input_patch_table(rows) -> str:
    headers = ["input_patch_len", "n_windows", "excluded", "nrmse", "wape"]
    return _render_table(headers, [[_cell(r[h]) for h in headers] for r in rows])


def format_output_patch_table(rows) -> str:
    headers = ["output_patch_len", "rounds", "n_windows", "excluded", "nrmse", "wape"]
    return _render_table(headers, [[_cell(r[h]) for h in headers] for r in rows])
