"""Command-line interface: config handling, the four subcommands, exit
codes, and deterministic output files."""

import json
import math
from datetime import datetime

import numpy as np
import pytest

from patchcast.cli import main
from patchcast.data import timestamps_for


TINY_MODEL = {"preset": "desk",
              "overrides": {"model_dim": 8, "num_layers": 1, "num_heads": 2,
                            "residual_hidden": 8}}

CORPUS_SPEC = {
    "pretrain": [{"name": "sine", "granularity": "daily", "kind": "sinusoid",
                  "n_series": 4, "length_range": [110, 130],
                  "period_range": [8.0, 16.0], "noise_level": 0.02}],
    "holdout": [{"name": "slow", "granularity": "daily", "kind": "sinusoid",
                 "n_series": 2, "length_range": [110, 130],
                 "period_range": [20.0, 30.0], "noise_level": 0.02}],
}


def pretrain_config(out_dir, steps=3):
    return {
        "seed": 1,
        "output_dir": str(out_dir),
        "corpus": {"kind": "synthetic", "seed": 5, "spec": CORPUS_SPEC},
        "model": TINY_MODEL,
        "train": {"total_steps": steps, "batch_size": 2, "base_lr": 1e-3,
                  "val_every": 0},
    }


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_run")
    cfg_path = root / "pretrain.json"
    out_dir = root / "run"
    cfg_path.write_text(json.dumps(pretrain_config(out_dir)))
    code = main(["pretrain", "--config", str(cfg_path)])
    assert code == 0
    return out_dir


# -- pretrain -------------------------------------------------------------------


def test_show_defaults_prints_complete_config(capsys):
    assert main(["pretrain", "--show-defaults"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert set(printed) == {"seed", "output_dir", "corpus", "model", "train"}
    assert printed["train"]["total_steps"] >= 1


def test_pretrain_writes_run_directory(trained):
    assert (trained / "ckpt_final.npz").exists()
    assert (trained / "state_final.npz").exists()
    assert (trained / "loss_curve.csv").exists()
    manifest = json.loads((trained / "manifest.json").read_text())
    assert manifest["kind"] == "synthetic"
    assert manifest["pretrain"]["num_series"] == 4
    assert manifest["holdout"]["num_series"] == 2
    resolved = json.loads((trained / "resolved_config.json").read_text())
    assert resolved["model"]["model_dim"] == 8
    assert resolved["train"]["total_steps"] == 3
    assert resolved["seed"] == 1


def test_pretrain_rerun_is_byte_identical(tmp_path):
    cfg1 = tmp_path / "a.json"
    cfg2 = tmp_path / "b.json"
    cfg1.write_text(json.dumps(pretrain_config(tmp_path / "r1", steps=2)))
    cfg2.write_text(json.dumps(pretrain_config(tmp_path / "r2", steps=2)))
    assert main(["pretrain", "--config", str(cfg1)]) == 0
    assert main(["pretrain", "--config", str(cfg2)]) == 0
    assert (tmp_path / "r1" / "loss_curve.csv").read_bytes() == \
        (tmp_path / "r2" / "loss_curve.csv").read_bytes()
    assert (tmp_path / "r1" / "ckpt_final.npz").read_bytes() == \
        (tmp_path / "r2" / "ckpt_final.npz").read_bytes()


def test_pretrain_rejects_unknown_config_key(tmp_path, capsys):
    cfg = pretrain_config(tmp_path / "out")
    cfg["optimizer"] = "sgd"
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["pretrain", "--config", str(path)]) == 2
    assert "unknown pretrain config keys" in capsys.readouterr().err


def test_pretrain_rejects_unknown_train_key(tmp_path, capsys):
    cfg = pretrain_config(tmp_path / "out")
    cfg["train"]["momentum"] = 0.9
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["pretrain", "--config", str(path)]) == 2
    assert "momentum" in capsys.readouterr().err


def test_pretrain_rejects_unknown_preset(tmp_path, capsys):
    cfg = pretrain_config(tmp_path / "out")
    cfg["model"] = {"preset": "galactic"}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["pretrain", "--config", str(path)]) == 2
    assert "preset" in capsys.readouterr().err


def test_pretrain_needs_config_or_show_defaults(capsys):
    assert main(["pretrain"]) == 2
    assert "--config" in capsys.readouterr().err


def test_output_dir_env_anchors_relative_paths(tmp_path, monkeypatch):
    monkeypatch.setenv("PATCHCAST_OUTPUT_DIR", str(tmp_path / "anchor"))
    cfg = pretrain_config("rel_run", steps=2)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["pretrain", "--config", str(path)]) == 0
    assert (tmp_path / "anchor" / "rel_run" / "ckpt_final.npz").exists()


# -- forecast -------------------------------------------------------------------


def jsonl_inputs(tmp_path):
    rows = [
        {"id": "good", "values": list(np.sin(np.arange(40) / 4.0) + 2.0),
         "start": "2020-01-06T00:00:00", "granularity": "daily"},
        {"id": "bare", "values": list(np.cos(np.arange(30) / 3.0) + 5.0)},
        {"id": "short", "values": [1.0, 2.0]},
    ]
    path = tmp_path / "in.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\nnot json\n")
    return path


def test_forecast_jsonl_with_per_record_errors(trained, tmp_path, capsys):
    inp = jsonl_inputs(tmp_path)
    out = tmp_path / "out.jsonl"
    code = main(["forecast", "--checkpoint", str(trained / "ckpt_final.npz"),
                 "--input", str(inp), "--horizon", "12", "--output", str(out)])
    assert code == 1  # two bad records
    entries = [json.loads(line) for line in out.read_text().splitlines()]
    by_id = {e.get("id", e.get("line")): e for e in entries}
    assert len(by_id["good"]["forecast"]) == 12
    assert by_id["good"]["rounds"] == 2  # h=8, H=12
    assert len(by_id["bare"]["forecast"]) == 12
    assert "shorter than one" in by_id["short"]["error"]
    assert "invalid JSON" in by_id[4]["error"]
    assert "failed" in capsys.readouterr().err


def test_forecast_all_good_exits_zero(trained, tmp_path):
    inp = tmp_path / "in.jsonl"
    inp.write_text(json.dumps({"id": "a", "values": list(np.arange(24.0))}) + "\n")
    out = tmp_path / "out.jsonl"
    assert main(["forecast", "--checkpoint", str(trained / "ckpt_final.npz"),
                 "--input", str(inp), "--horizon", "8", "--output", str(out)]) == 0
    entry = json.loads(out.read_text())
    assert entry["rounds"] == 1
    assert all(math.isfinite(v) for v in entry["forecast"])


def test_forecast_granularity_flag_supplies_calendar(trained, tmp_path):
    rec = {"id": "a", "values": list(np.arange(24.0)), "start": "2020-01-06T00:00:00"}
    inp = tmp_path / "in.jsonl"
    inp.write_text(json.dumps(rec) + "\n")
    out_with = tmp_path / "with.jsonl"
    out_without = tmp_path / "without.jsonl"
    ckpt = str(trained / "ckpt_final.npz")
    assert main(["forecast", "--checkpoint", ckpt, "--input", str(inp),
                 "--horizon", "8", "--output", str(out_with),
                 "--granularity", "daily"]) == 0
    assert main(["forecast", "--checkpoint", ckpt, "--input", str(inp),
                 "--horizon", "8", "--output", str(out_without)]) == 0
    with_feats = json.loads(out_with.read_text())["forecast"]
    without = json.loads(out_without.read_text())["forecast"]
    assert with_feats != without  # calendar features actually reached the model


def test_forecast_zero_horizon_rejected(trained, tmp_path, capsys):
    inp = tmp_path / "in.jsonl"
    inp.write_text("{}\n")
    assert main(["forecast", "--checkpoint", str(trained / "ckpt_final.npz"),
                 "--input", str(inp), "--horizon", "0",
                 "--output", str(tmp_path / "o.jsonl")]) == 2
    assert "horizon" in capsys.readouterr().err


def test_forecast_bad_checkpoint_path(tmp_path, capsys):
    assert main(["forecast", "--checkpoint", str(tmp_path / "nope.npz"),
                 "--input", str(tmp_path / "in.jsonl"), "--horizon", "8",
                 "--output", str(tmp_path / "o.jsonl")]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_forecast_unknown_granularity_flag(trained, tmp_path, capsys):
    assert main(["forecast", "--checkpoint", str(trained / "ckpt_final.npz"),
                 "--input", str(tmp_path / "in.jsonl"), "--horizon", "8",
                 "--output", str(tmp_path / "o.jsonl"),
                 "--granularity", "fortnightly"]) == 2
    assert "granularity" in capsys.readouterr().err


# -- evaluate -------------------------------------------------------------------


def write_eval_csv(path, n_series=2, length=120):
    rows = ["id,timestamp,value"]
    for i in range(n_series):
        stamps = timestamps_for(datetime(2020, 1, 6), "daily", length)
        vals = np.sin(np.arange(length) / 5.0 + i) + 3.0
        rows.extend(f"s{i},{ts.isoformat()},{float(v)!r}" for ts, v in zip(stamps, vals))
    path.write_text("\n".join(rows) + "\n")


def test_evaluate_prints_model_and_baselines(trained, tmp_path, capsys):
    data = tmp_path / "eval.csv"
    write_eval_csv(data)
    out_dir = tmp_path / "evalout"
    code = main(["evaluate", "--checkpoint", str(trained / "ckpt_final.npz"),
                 "--data", str(data), "--context", "32", "--horizon", "8",
                 "--stride", "4", "--season", "12", "--out-dir", str(out_dir)])
    assert code == 0
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert lines[0].split() == ["predictor", "n_windows", "excluded", "nrmse", "wape"]
    names = [l.split()[0] for l in lines[2:]]
    assert names == ["model", "repeat_last", "seasonal_naive(12)"]
    summary = json.loads((out_dir / "summary.json").read_text())
    assert set(summary["predictors"]) == set(names)
    assert (out_dir / "windows_s0.csv").exists()
    assert (out_dir / "windows_s1.csv").exists()


def test_evaluate_too_long_horizon_fails_cleanly(trained, tmp_path, capsys):
    data = tmp_path / "eval.csv"
    write_eval_csv(data, n_series=1)
    assert main(["evaluate", "--checkpoint", str(trained / "ckpt_final.npz"),
                 "--data", str(data), "--context", "32", "--horizon", "99"]) == 2
    assert "fits no" in capsys.readouterr().err


def test_evaluate_missing_data_file(trained, tmp_path, capsys):
    assert main(["evaluate", "--checkpoint", str(trained / "ckpt_final.npz"),
                 "--data", str(tmp_path / "ghost.csv"), "--context", "8",
                 "--horizon", "4"]) == 2
    assert "ingest" in capsys.readouterr().err


# -- ablate ---------------------------------------------------------------------


def ablate_config(out_dir, suite, **eval_over):
    ev = {"horizon": 8, "stride": 8}
    ev.update(eval_over)
    return {
        "suite": suite,
        "seed": 1,
        "output_dir": str(out_dir),
        "corpus": {"kind": "synthetic", "seed": 5, "spec": CORPUS_SPEC},
        "model": TINY_MODEL,
        "train": {"total_steps": 2, "batch_size": 2, "val_every": 0},
        "eval": ev,
    }


def test_ablate_context_suite(tmp_path, capsys):
    out_dir = tmp_path / "ab"
    cfg = tmp_path / "ablate.json"
    cfg.write_text(json.dumps(ablate_config(out_dir, "context",
                                            context_lengths=[16, 32])))
    assert main(["ablate", "--config", str(cfg)]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].split()[0] == "context_len"
    assert (out_dir / "context_table.txt").read_text() == table
    rows = (out_dir / "context_rows.csv").read_text().splitlines()
    assert rows[0] == "context_len,n_windows,excluded,nrmse,wape"
    assert len(rows) == 3


def test_ablate_reruns_identical(tmp_path, capsys):
    cfg = tmp_path / "ablate.json"
    cfg.write_text(json.dumps(ablate_config(tmp_path / "ab", "context",
                                            context_lengths=[16])))
    assert main(["ablate", "--config", str(cfg)]) == 0
    first = (tmp_path / "ab" / "context_rows.csv").read_bytes()
    assert main(["ablate", "--config", str(cfg)]) == 0
    assert (tmp_path / "ab" / "context_rows.csv").read_bytes() == first


def test_ablate_context_reuses_checkpoint(trained, tmp_path, capsys):
    conf = ablate_config(tmp_path / "ab", "context", context_lengths=[16])
    conf["checkpoint"] = str(trained / "ckpt_final.npz")
    del conf["model"], conf["train"]
    cfg = tmp_path / "ablate.json"
    cfg.write_text(json.dumps(conf))
    assert main(["ablate", "--config", str(cfg)]) == 0
    assert (tmp_path / "ab" / "context_table.txt").exists()


def test_ablate_output_patch_suite_reports_rounds(tmp_path, capsys):
    out_dir = tmp_path / "ab"
    cfg = tmp_path / "ablate.json"
    cfg.write_text(json.dumps(ablate_config(out_dir, "output-patch",
                                            sizes=[8, 4], context_len=32,
                                            horizon=16)))
    assert main(["ablate", "--config", str(cfg)]) == 0
    rows = (out_dir / "output-patch_rows.csv").read_text().splitlines()
    assert rows[0] == "output_patch_len,rounds,n_windows,excluded,nrmse,wape"
    assert rows[1].startswith("8,2,")   # ceil(16/8) = 2 rounds
    assert rows[2].startswith("4,4,")   # ceil(16/4) = 4 rounds


def test_ablate_input_patch_suite(tmp_path, capsys):
    out_dir = tmp_path / "ab"
    cfg = tmp_path / "ablate.json"
    cfg.write_text(json.dumps(ablate_config(out_dir, "input-patch",
                                            sizes=[4, 2], context_len=32)))
    assert main(["ablate", "--config", str(cfg)]) == 0
    rows = (out_dir / "input-patch_rows.csv").read_text().splitlines()
    assert rows[0] == "input_patch_len,n_windows,excluded,nrmse,wape"
    assert rows[1].startswith("4,") and rows[2].startswith("2,")


def test_ablate_unknown_suite_lists_options(tmp_path, capsys):
    cfg = tmp_path / "ablate.json"
    cfg.write_text(json.dumps(ablate_config(tmp_path / "ab", "sideways")))
    assert main(["ablate", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "context" in err and "input-patch" in err and "output-patch" in err


def test_ablate_patch_suite_requires_sizes(tmp_path, capsys):
    cfg = tmp_path / "ablate.json"
    cfg.write_text(json.dumps(ablate_config(tmp_path / "ab", "input-patch")))
    assert main(["ablate", "--config", str(cfg)]) == 2
    assert "sizes" in capsys.readouterr().err


# -- parser ---------------------------------------------------------------------


def test_missing_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["transcend"])
    assert exc.value.code == 2
