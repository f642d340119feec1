#!/usr/bin/env python3
"""Run the three desk-scale ablation suites (context length, input patch
size, output patch size) from the committed configs and collect their
tables under one output directory.

Equivalent to calling `patchcast ablate --config configs/ablate_*.json`
three times; each suite writes <suite>_table.txt and <suite>_rows.csv.
"""

import argparse
import os
from pathlib import Path

from patchcast.cli import OUTPUT_DIR_ENV, main as cli_main

SUITES = ("ablate_context.json", "ablate_input_patch.json",
          "ablate_output_patch.json")


def main() -> int:
    repo = Path(__file__).resolve().parent.parent
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs-dir", default=str(repo / "configs"))
    ap.add_argument("--out-dir", default="runs",
                    help="anchor for the relative output_dir in each config")
    args = ap.parse_args()

    os.environ[OUTPUT_DIR_ENV] = str(Path(args.out_dir).resolve())
    for name in SUITES:
        config = Path(args.configs_dir) / name
        print(f"== {name} ==")
        rc = cli_main(["ablate", "--config", str(config)])
        if rc != 0:
            return rc
    print(f"tables under {os.environ[OUTPUT_DIR_ENV]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
