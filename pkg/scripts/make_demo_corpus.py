#!/usr/bin/env python3
"""Generate demo inputs for the CLI: a long-format CSV for `patchcast
evaluate` and a JSONL request file for `patchcast forecast`.

The series are daily sinusoids drawn from the 24-32 period band that the
demo pretrain config (configs/pretrain_demo.json) holds out, so forecasts
against its checkpoint exercise genuine zero-shot transfer.
"""

import argparse
import csv
import json
from pathlib import Path

from patchcast.data import FamilySpec, GeneratorSpec, advance, synth_corpus


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="demo_data", help="directory to write into")
    ap.add_argument("--n-series", type=int, default=6)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    spec = GeneratorSpec(pretrain=[FamilySpec(
        name="demo", granularity="daily", kind="sinusoid",
        n_series=args.n_series, length_range=(140, 180),
        period_range=(24.0, 32.0), amplitude_range=(0.8, 1.5),
        trend="linear", drift_range=(-1.0, 1.0), noise_level=0.05)])
    corpus = synth_corpus(spec, seed=args.seed).pretrain

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    csv_path = out_dir / "demo_series.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "timestamp", "value"])
        for s in corpus.series:
            for k, v in enumerate(s.values):
                ts = advance(s.start, s.granularity, k)
                writer.writerow([s.series_id, ts.isoformat(), repr(float(v))])

    jsonl_path = out_dir / "forecast_requests.jsonl"
    with open(jsonl_path, "w") as fh:
        for s in corpus.series:
            record = {"id": s.series_id,
                      "values": [float(v) for v in s.values[:96]],
                      "start": s.start.isoformat(),
                      "granularity": s.granularity}
            fh.write(json.dumps(record) + "\n")

    total = sum(len(s) for s in corpus.series)
    print(f"wrote {csv_path} ({len(corpus.series)} series, {total} rows) "
          f"and {jsonl_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
