"""Command-line entry points: pretrain, forecast, evaluate, ablate.

Every command is driven by explicit arguments plus JSON config files with
strict unknown-key rejection, and all outputs are deterministic for a fixed
config, so reruns overwrite byte-identical files. The only environment
variable honored is PATCHCAST_OUTPUT_DIR, which anchors relative output
directories.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .data import (
    GRANULARITIES,
    GeneratorSpec,
    IngestError,
    derive_date_features,
    ingest_csv,
    synth_corpus,
)
from .evaluation import (
    EvalConfigError,
    context_sweep,
    format_context_sweep_table,
    format_input_patch_table,
    format_output_patch_table,
    make_model_predictor,
    make_seasonal_naive,
    patch_size_comparison,
    pooled_over_series,
    repeat_last,
    rolling_eval,
)
from .inference import ForecastError, forecast
from .model import ConfigError, ModelConfig, PRESETS
from .training import (
    TrainConfig,
    TrainConfigError,
    TrainingDivergedError,
    train,
)

ABLATION_SUITES = ("context", "input-patch", "output-patch")
OUTPUT_DIR_ENV = "PATCHCAST_OUTPUT_DIR"


class CLIError(Exception):
    """Config/usage problem surfaced to the user; exits with code 2."""


def _fail(msg: str) -> "CLIError":
    return CLIError(msg)


def _load_json(path) -> dict:
    try:
        with open(path) as fh:
            loaded = json.load(fh)
    except OSError as exc:
        raise _fail(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise _fail(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(loaded, dict):
        raise _fail(f"config {path} must hold a JSON object")
    return loaded


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise _fail(f"unknown {where} keys: {sorted(unknown)} "
                    f"(allowed: {sorted(allowed)})")


def _resolve_out_dir(raw: str) -> Path:
    path = Path(raw)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    return path


def _build_model_config(section: dict) -> ModelConfig:
    _check_keys(section, {"preset", "overrides"}, "model")
    preset = section.get("preset", "desk")
    if preset not in PRESETS:
        raise _fail(f"unknown model preset {preset!r} (have: {sorted(PRESETS)})")
    overrides = section.get("overrides", {})
    if not isinstance(overrides, dict):
        raise _fail("model overrides must be an object")
    try:
        return ModelConfig.preset(preset, **overrides)
    except (ConfigError, TypeError) as exc:
        raise _fail(f"bad model config: {exc}") from exc


def _build_corpus(section: dict, config_dir: Path):
    """Returns (train_corpus, holdout_corpus_or_None, manifest_dict)."""
    kind = section.get("kind")
    if kind == "synthetic":
        _check_keys(section, {"kind", "spec", "seed"}, "corpus")
        try:
            spec = GeneratorSpec.from_dict(section.get("spec", {}))
        except Exception as exc:
            raise _fail(f"bad corpus spec: {exc}") from exc
        pair = synth_corpus(spec, seed=int(section.get("seed", 0)))
        manifest = {"kind": "synthetic", "seed": int(section.get("seed", 0)),
                    "pretrain": pair.pretrain.manifest(),
                    "holdout": pair.holdout.manifest()}
        holdout = pair.holdout if len(pair.holdout) else None
        return pair.pretrain, holdout, manifest
    if kind == "csv":
        _check_keys(section, {"kind", "path", "granularity", "log_transform"}, "corpus")
        raw = Path(section.get("path", ""))
        path = raw if raw.is_absolute() else config_dir / raw
        try:
            report = ingest_csv(path, granularity=section.get("granularity"),
                                log_transform=bool(section.get("log_transform", False)))
        except (OSError, IngestError) as exc:
            raise _fail(f"cannot ingest {path}: {exc}") from exc
        manifest = {"kind": "csv", "path": str(path),
                    "series": report.corpus.manifest(),
                    "skipped": [{"id": sid, "reason": why} for sid, why in report.skipped]}
        return report.corpus, None, manifest
    raise _fail(f'corpus kind must be "synthetic" or "csv", got {kind!r}')


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _default_pretrain_config() -> dict:
    return {
        "seed": 0,
        "output_dir": "runs/pretrain",
        "corpus": {"kind": "synthetic", "seed": 0,
                   "spec": {"pretrain": [], "holdout": []}},
        "model": {"preset": "desk", "overrides": {}},
        "train": TrainConfig().to_dict(),
    }


# -- pretrain ---------------------------------------------------------------------


def cmd_pretrain(args) -> int:
    if args.show_defaults:
        print(json.dumps(_default_pretrain_config(), indent=2, sort_keys=True))
        return 0
    if not args.config:
        raise _fail("pretrain needs --config (or --show-defaults)")
    cfg_path = Path(args.config)
    raw = _load_json(cfg_path)
    _check_keys(raw, {"seed", "output_dir", "corpus", "model", "train"}, "pretrain config")
    if "output_dir" not in raw:
        raise _fail("pretrain config needs an output_dir")
    corpus, _, manifest = _build_corpus(raw.get("corpus", {}), cfg_path.parent)
    model_cfg = _build_model_config(raw.get("model", {}))
    train_section = dict(raw.get("train", {}))
    if "seed" in raw and "seed" not in train_section:
        train_section["seed"] = int(raw["seed"])
    try:
        train_cfg = TrainConfig.from_dict(train_section)
    except (TrainConfigError, TypeError) as exc:
        raise _fail(f"bad train config: {exc}") from exc

    out_dir = _resolve_out_dir(raw["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "manifest.json", manifest)
    _write_json(out_dir / "resolved_config.json", {
        "seed": train_cfg.seed,
        "output_dir": str(out_dir),
        "corpus": raw.get("corpus", {}),
        "model": model_cfg.to_dict(),
        "train": train_cfg.to_dict(),
    })
    try:
        result = train(corpus, model_cfg, train_cfg, out_dir=out_dir,
                       resume_from=args.resume_from)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    last = result.loss_curve[-1]
    print(f"trained {train_cfg.total_steps} steps; "
          f"final train loss {last[1]:.6f}; "
          f"checkpoint {result.final_checkpoint}")
    return 0


# -- forecast ----------------------------------------------------------------------


def _record_features(record: dict, cfg: ModelConfig, horizon: int,
                     default_granularity: str | None):
    if cfg.feature_dim == 0:
        return None
    gran = record.get("granularity", default_granularity)
    start_text = record.get("start")
    if gran is None or start_text is None:
        return None  # calendar unknown: model sees its masked sentinel
    if gran not in GRANULARITIES:
        raise ForecastError(f"unknown granularity {gran!r}")
    try:
        start = datetime.fromisoformat(str(start_text).replace("Z", "+00:00"))
    except ValueError as exc:
        raise ForecastError(f"bad start timestamp {start_text!r}") from exc
    if start.tzinfo is not None:
        start = start.astimezone(timezone.utc).replace(tzinfo=None)
    return derive_date_features(start, gran, len(record["values"]) + horizon)


def cmd_forecast(args) -> int:
    if args.horizon < 1:
        raise _fail(f"--horizon must be >= 1, got {args.horizon}")
    if args.granularity is not None and args.granularity not in GRANULARITIES:
        raise _fail(f"unknown --granularity {args.granularity!r}")
    try:
        bundle = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise _fail(str(exc)) from exc
    normalization = bundle.extra.get("normalization", "per-window")
    failures = 0
    try:
        in_lines = Path(args.input).read_text().splitlines()
    except OSError as exc:
        raise _fail(f"cannot read input {args.input}: {exc}") from exc
    out_path = Path(args.output)
    with open(out_path, "w") as out:
        for line_no, line in enumerate(in_lines, start=1):
            if not line.strip():
                continue
            entry = _forecast_record(line, line_no, bundle, args.horizon,
                                     normalization, args.granularity)
            if "error" in entry:
                failures += 1
            out.write(json.dumps(entry, sort_keys=True) + "\n")
    if failures:
        print(f"{failures} record(s) failed; see {out_path}", file=sys.stderr)
    return 1 if failures else 0


def _forecast_record(line: str, line_no: int, bundle, horizon: int,
                     normalization: str, default_granularity: str | None) -> dict:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        return {"line": line_no, "error": f"invalid JSON: {exc}"}
    if not isinstance(record, dict) or "values" not in record:
        return {"line": line_no, "error": 'record must be an object with "values"'}
    rid = record.get("id", f"line-{line_no}")
    try:
        values = np.asarray(record["values"], dtype=np.float64)
        feats = _record_features(record, bundle.config, horizon, default_granularity)
        res = forecast(bundle.weights, bundle.config, values, horizon,
                       features=feats, normalization=normalization)
    except (ForecastError, ValueError) as exc:
        return {"id": rid, "error": str(exc)}
    return {"id": rid, "forecast": [float(v) for v in res.values],
            "rounds": res.rounds}


# -- evaluate ----------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    try:
        bundle = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise _fail(str(exc)) from exc
    try:
        report = ingest_csv(args.data)
    except (OSError, IngestError) as exc:
        raise _fail(f"cannot ingest {args.data}: {exc}") from exc
    series = [s for s in report.corpus.series if len(s) >= 10]
    if not series:
        raise _fail("no usable series (need at least 10 points each)")
    normalization = bundle.extra.get("normalization", "per-window")
    predictors = [("model", make_model_predictor(bundle.weights, bundle.config,
                                                 normalization)),
                  ("repeat_last", repeat_last)]
    if args.season:
        predictors.append((f"seasonal_naive({args.season})",
                           make_seasonal_naive(args.season)))
    rows = []
    per_series = {}
    try:
        for name, predictor in predictors:
            pooled = pooled_over_series(predictor, series, args.context,
                                        args.horizon, args.stride)
            rows.append({"predictor": name, **pooled})
            if name == "model":
                per_series = {s.series_id: rolling_eval(predictor, s, args.context,
                                                        args.horizon, args.stride)
                              for s in series}
    except EvalConfigError as exc:
        raise _fail(str(exc)) from exc

    from .evaluation import _render_table

    headers = ["predictor", "n_windows", "excluded", "nrmse", "wape"]
    cells = [[r["predictor"], str(r["n_windows"]), str(r["excluded"]),
              f"{r['nrmse']:.6f}" if not math.isnan(r["nrmse"]) else "nan",
              f"{r['wape']:.6f}" if not math.isnan(r["wape"]) else "nan"]
             for r in rows]
    print(_render_table(headers, cells), end="")

    if args.out_dir:
        out_dir = _resolve_out_dir(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for sid, rep in per_series.items():
            rep.write_csv(out_dir / f"windows_{sid}.csv")
        _write_json(out_dir / "summary.json", {
            "context_len": args.context, "horizon": args.horizon,
            "stride": args.stride,
            "predictors": {r["predictor"]: {k: (None if isinstance(v, float) and math.isnan(v) else v)
                                            for k, v in r.items() if k != "predictor"}
                           for r in rows}})
    return 0


# -- ablate ------------------------------------------------------------------------


def _eval_series_for(corpus, holdout):
    return holdout.series if holdout is not None else corpus.series


def cmd_ablate(args) -> int:
    cfg_path = Path(args.config)
    raw = _load_json(cfg_path)
    _check_keys(raw, {"suite", "seed", "output_dir", "corpus", "model",
                      "train", "checkpoint", "eval"}, "ablate config")
    suite = raw.get("suite")
    if suite not in ABLATION_SUITES:
        print(f"error: unknown suite {suite!r}; available: {', '.join(ABLATION_SUITES)}",
              file=sys.stderr)
        return 2
    if "output_dir" not in raw:
        raise _fail("ablate config needs an output_dir")
    corpus, holdout, _ = _build_corpus(raw.get("corpus", {}), cfg_path.parent)
    eval_series = _eval_series_for(corpus, holdout)
    ev = dict(raw.get("eval", {}))
    _check_keys(ev, {"context_lengths", "context_len", "horizon", "stride", "sizes"},
                "ablate eval")
    horizon = int(ev.get("horizon", 24))
    stride = int(ev.get("stride", 1))
    out_dir = _resolve_out_dir(raw["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    train_section = dict(raw.get("train", {}))
    if "seed" in raw and "seed" not in train_section:
        train_section["seed"] = int(raw["seed"])

    try:
        if suite == "context":
            if "checkpoint" in raw:
                bundle = load_checkpoint(raw["checkpoint"])
                weights, model_cfg = bundle.weights, bundle.config
                normalization = bundle.extra.get("normalization", "per-window")
            else:
                model_cfg = _build_model_config(raw.get("model", {}))
                train_cfg = TrainConfig.from_dict(train_section)
                weights = train(corpus, model_cfg, train_cfg).weights
                normalization = train_cfg.normalization
            lengths = ev.get("context_lengths", [64, 128, 256, 512])
            rows = context_sweep(weights, model_cfg, eval_series, lengths,
                                 horizon, stride, normalization)
            table = format_context_sweep_table(rows)
            csv_header = "context_len,n_windows,excluded,nrmse,wape\n"
            csv_rows = [f"{r['context_len']},{r['n_windows']},{r['excluded']},"
                        f"{r['nrmse']!r},{r['wape']!r}\n" for r in rows]
        else:
            which = "input" if suite == "input-patch" else "output"
            model_cfg = _build_model_config(raw.get("model", {}))
            train_cfg = TrainConfig.from_dict(train_section)
            sizes = ev.get("sizes")
            if not sizes:
                raise _fail(f"{suite} suite needs eval.sizes")
            context_len = int(ev.get("context_len", 256))
            rows = patch_size_comparison(corpus, eval_series, model_cfg, train_cfg,
                                         which, sizes, context_len, horizon, stride)
            if which == "input":
                table = format_input_patch_table(rows)
                key = "input_patch_len"
                csv_header = "input_patch_len,n_windows,excluded,nrmse,wape\n"
                csv_rows = [f"{r[key]},{r['n_windows']},{r['excluded']},"
                            f"{r['nrmse']!r},{r['wape']!r}\n" for r in rows]
            else:
                table = format_output_patch_table(rows)
                key = "output_patch_len"
                csv_header = "output_patch_len,rounds,n_windows,excluded,nrmse,wape\n"
                csv_rows = [f"{r[key]},{r['rounds']},{r['n_windows']},{r['excluded']},"
                            f"{r['nrmse']!r},{r['wape']!r}\n" for r in rows]
    except (CheckpointError, TrainConfigError, EvalConfigError) as exc:
        raise _fail(str(exc)) from exc

    print(table, end="")
    (out_dir / f"{suite}_table.txt").write_text(table)
    with open(out_dir / f"{suite}_rows.csv", "w") as fh:
        fh.write(csv_header)
        fh.writelines(csv_rows)
    return 0


# -- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchcast",
        description="Patched-attention time-series foundation model: "
                    "pretrain, forecast, evaluate, ablate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_tr = sub.add_parser("pretrain", help="pretrain on a corpus from a JSON config")
    p_tr.add_argument("--config", help="JSON config path")
    p_tr.add_argument("--resume-from", help="checkpoint to continue from")
    p_tr.add_argument("--show-defaults", action="store_true",
                      help="print a complete default config and exit")
    p_tr.set_defaults(func=cmd_pretrain)

    p_fc = sub.add_parser("forecast", help="zero-shot forecasts for JSONL records")
    p_fc.add_argument("--checkpoint", required=True)
    p_fc.add_argument("--input", required=True, help="JSONL with id/values per line")
    p_fc.add_argument("--horizon", required=True, type=int)
    p_fc.add_argument("--output", required=True, help="JSONL results path")
    p_fc.add_argument("--granularity", help="default calendar granularity for records")
    p_fc.set_defaults(func=cmd_forecast)

    p_ev = sub.add_parser("evaluate", help="rolling-window scores against baselines")
    p_ev.add_argument("--checkpoint", required=True)
    p_ev.add_argument("--data", required=True, help="id,timestamp,value CSV")
    p_ev.add_argument("--context", required=True, type=int)
    p_ev.add_argument("--horizon", required=True, type=int)
    p_ev.add_argument("--stride", type=int, default=1)
    p_ev.add_argument("--season", type=int,
                      help="season length for the seasonal-naive baseline")
    p_ev.add_argument("--out-dir", help="write per-window CSVs and summary.json here")
    p_ev.set_defaults(func=cmd_evaluate)

    p_ab = sub.add_parser("ablate", help="run an ablation suite from a JSON config")
    p_ab.add_argument("--config", required=True)
    p_ab.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
