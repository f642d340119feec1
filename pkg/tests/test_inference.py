"""Autoregressive forecasting: round counting, feed-back continuation,
capacity sliding, fixed normalization, and input validation.

The continuation oracle below re-implements the loop with direct model
calls, so forecast() is checked against an independent walk of the same
contract.
"""

import math

import numpy as np
import pytest

from patchcast.inference import (
    ForecastError,
    ForecastResult,
    HorizonError,
    autoregressive_rounds,
    forecast,
)
from patchcast.model import (
    ContextTooShortError,
    ModelConfig,
    ModelWeights,
    assemble_patch_inputs,
    forward,
)
from patchcast.tensor import active_tape
from patchcast.training import apply_scale, invert_scale, normalize_window


def tiny_cfg(**over):
    base = dict(input_patch_len=4, output_patch_len=8, model_dim=8, num_layers=1,
                num_heads=2, feature_dim=0, residual_hidden=8, max_positions=64)
    base.update(over)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def rig():
    cfg = tiny_cfg()
    return cfg, ModelWeights.initialize(cfg, seed=11)


def wave(n, period=12.0, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n)
    return np.sin(2 * math.pi * t / period) + 0.01 * rng.normal(size=n) + 3.0


# -- round counting -----------------------------------------------------------


@pytest.mark.parametrize("horizon,h,want", [
    (1, 8, 1), (8, 8, 1), (9, 8, 2), (16, 8, 2), (32, 8, 4),
    (32, 2, 16), (5, 2, 3), (512, 128, 4), (512, 32, 16),
])
def test_round_count_is_ceiling(horizon, h, want):
    assert autoregressive_rounds(horizon, h) == want


# -- shape and bookkeeping -------------------------------------------------------


@pytest.mark.parametrize("horizon", [1, 7, 8, 9, 26])
def test_forecast_length_and_rounds(rig, horizon):
    cfg, weights = rig
    res = forecast(weights, cfg, wave(60), horizon)
    assert isinstance(res, ForecastResult)
    assert res.values.shape == (horizon,)
    assert res.rounds == -(-horizon // 8)
    assert np.isfinite(res.values).all()


def test_round_index_labels_each_step(rig):
    cfg, weights = rig
    res = forecast(weights, cfg, wave(60), 20)
    assert res.round_index.tolist() == [0] * 8 + [1] * 8 + [2] * 4
    assert res.rounds == 3


def test_forecast_deterministic(rig):
    cfg, weights = rig
    a = forecast(weights, cfg, wave(60), 20)
    b = forecast(weights, cfg, wave(60), 20)
    assert np.array_equal(a.values, b.values)


def test_forecast_records_nothing_on_tape(rig):
    cfg, weights = rig
    forecast(weights, cfg, wave(60), 9)
    assert active_tape().records == []


# -- continuation oracle -----------------------------------------------------------


def manual_forecast(weights, cfg, values, horizon):
    """Independent reimplementation: explicit rounds of tokenize/forward."""
    p, h = cfg.input_patch_len, cfg.output_patch_len
    cap = p * cfg.max_positions
    values = values[-cap:] if len(values) > cap else values
    normed, rec = normalize_window(values)
    out = []
    work = normed
    while len(out) * h < horizon:
        cur = work[-cap:]
        pred = forward(weights, cfg, assemble_patch_inputs(cur, None, cfg)).data[-1]
        out.append(pred)
        work = np.concatenate([work, pred])
    return invert_scale(np.concatenate(out)[:horizon], rec)


def test_forecast_matches_manual_continuation(rig):
    cfg, weights = rig
    vals = wave(50, seed=4)
    for horizon in (8, 12, 24):
        got = forecast(weights, cfg, vals, horizon)
        assert np.array_equal(got.values, manual_forecast(weights, cfg, vals, horizon))


def test_longer_horizon_keeps_shorter_prefix_bitwise(rig):
    cfg, weights = rig
    vals = wave(44, seed=2)
    short = forecast(weights, cfg, vals, 5)
    long = forecast(weights, cfg, vals, 21)
    assert np.array_equal(long.values[:5], short.values)


def test_second_round_consumes_first_round_output(rig):
    # negative control: a model whose round-1 output is perturbed must give a
    # different round 2 — the feedback path is live
    cfg, weights = rig
    vals = wave(40, seed=6)
    honest = forecast(weights, cfg, vals, 16)
    normed, rec = normalize_window(vals)
    pred1 = forward(weights, cfg, assemble_patch_inputs(normed, None, cfg)).data[-1]
    tampered = pred1 + 0.5
    work = np.concatenate([normed, tampered])
    pred2 = forward(weights, cfg, assemble_patch_inputs(work, None, cfg)).data[-1]
    assert not np.allclose(invert_scale(pred2, rec), honest.values[8:])


# -- capacity sliding window ---------------------------------------------------------


def test_long_context_clamps_to_most_recent_points():
    cfg = tiny_cfg(max_positions=4)  # cap = 16 points
    weights = ModelWeights.initialize(cfg, seed=3)
    vals = wave(40, seed=8)
    full = forecast(weights, cfg, vals, 8)
    clamped = forecast(weights, cfg, vals[-16:], 8)
    assert np.array_equal(full.values, clamped.values)
    assert full.scale == clamped.scale


def test_capacity_slides_across_rounds():
    # 16-point cap, 16-point context: round 2 must slide the window, and the
    # manual walk (which also slides) must agree exactly
    cfg = tiny_cfg(max_positions=4)
    weights = ModelWeights.initialize(cfg, seed=3)
    vals = wave(16, seed=9)
    got = forecast(weights, cfg, vals, 24)
    assert np.array_equal(got.values, manual_forecast(weights, cfg, vals, 24))


# -- normalization handling --------------------------------------------------------


def test_scale_record_comes_from_clamped_context(rig):
    cfg, weights = rig
    vals = wave(60, seed=5)
    res = forecast(weights, cfg, vals, 8)
    _, rec = normalize_window(vals)  # 60 < cap, no clamp
    assert res.scale == rec


def test_forecast_respects_normalization_none(rig):
    cfg, weights = rig
    vals = wave(60, seed=5)
    res = forecast(weights, cfg, vals, 8, normalization="none")
    assert res.scale.mu == 0.0 and res.scale.sigma == 1.0
    # raw-space continuation: manually run one round without scaling
    pred = forward(weights, cfg, assemble_patch_inputs(vals, None, cfg)).data[-1]
    assert np.array_equal(res.values, pred)


def test_forecast_shift_equivariance_under_per_window_scaling(rig):
    # standardization makes the model see identical inputs for x and 5x+100,
    # so forecasts must map through the same affine transform
    cfg, weights = rig
    vals = wave(60, seed=7)
    base = forecast(weights, cfg, vals, 12)
    moved = forecast(weights, cfg, 5.0 * vals + 100.0, 12)
    assert np.allclose(moved.values, 5.0 * base.values + 100.0, rtol=0, atol=1e-9)


# -- calendar features ----------------------------------------------------------------


@pytest.fixture(scope="module")
def feat_rig():
    cfg = tiny_cfg(feature_dim=5)
    return cfg, ModelWeights.initialize(cfg, seed=13)


def test_features_cover_context_and_horizon(feat_rig):
    from patchcast.data import derive_date_features
    from datetime import datetime

    cfg, weights = feat_rig
    vals = wave(40)
    feats = derive_date_features(datetime(2021, 3, 1), "daily", 40 + 16)
    res = forecast(weights, cfg, vals, 16, features=feats)
    assert res.values.shape == (16,)


def test_future_features_feed_later_rounds_only(feat_rig):
    cfg, weights = feat_rig
    vals = wave(40)
    L, H = 40, 16
    rng = np.random.default_rng(0)
    feats = rng.uniform(-0.5, 0.5, size=(L + H, 5))
    base = forecast(weights, cfg, vals, H, features=feats)
    # rows [L, L+8) are inputs to round 2: changing them moves round 2 only
    bumped = feats.copy()
    bumped[L:L + 8] += 0.25
    moved = forecast(weights, cfg, vals, H, features=bumped)
    assert np.array_equal(moved.values[:8], base.values[:8])
    assert not np.array_equal(moved.values[8:], base.values[8:])
    # rows at/after L+8 are never consumed for H=16: bit-identical output
    tail = feats.copy()
    tail[L + 8:] += 0.25
    same = forecast(weights, cfg, vals, H, features=tail)
    assert np.array_equal(same.values, base.values)


def test_missing_features_fill_with_sentinel(feat_rig):
    cfg, weights = feat_rig
    vals = wave(40)
    bare = forecast(weights, cfg, vals, 8)
    sentinel = forecast(weights, cfg, vals, 8,
                        features=np.full((48, 5), -1.0))
    assert np.array_equal(bare.values, sentinel.values)


# -- validation -------------------------------------------------------------------


def test_horizon_must_be_positive_integer(rig):
    cfg, weights = rig
    for bad in (0, -3, 2.5, "8", True):
        with pytest.raises(HorizonError):
            forecast(weights, cfg, wave(40), bad)


def test_context_shorter_than_patch_rejected(rig):
    cfg, weights = rig
    with pytest.raises(ContextTooShortError):
        forecast(weights, cfg, wave(3), 8)


def test_nonfinite_context_rejected(rig):
    cfg, weights = rig
    vals = wave(40)
    vals[7] = math.nan
    with pytest.raises(ForecastError, match="non-finite"):
        forecast(weights, cfg, vals, 8)


def test_feature_length_must_match_context_plus_horizon(feat_rig):
    cfg, weights = feat_rig
    with pytest.raises(ForecastError, match="features shape"):
        forecast(weights, cfg, wave(40), 16, features=np.zeros((40, 5)))


def test_featureless_model_rejects_features(rig):
    cfg, weights = rig
    with pytest.raises(ForecastError, match="no calendar features"):
        forecast(weights, cfg, wave(40), 8, features=np.zeros((48, 5)))


def test_context_must_be_one_dimensional(rig):
    cfg, weights = rig
    with pytest.raises(ForecastError, match="1-d"):
        forecast(weights, cfg, np.ones((8, 2)), 8)
