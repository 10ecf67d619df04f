"""Solve exported LP files with HiGHS and compare against `seqrec predict`.

Usage: python3 scripts/cross_check_lp.py DATASET MODEL [--bin target/release/seqrec]

Needs `pip install highspy`. Every start POI and every length from 2 to
min(m, 6) is checked with three cut rounds.
"""

import argparse
import json
import subprocess
import sys
import tempfile
from pathlib import Path

import highspy


def solve(lp_path):
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.readModel(str(lp_path))
    h.run()
    return h.getInfo().objective_function_value


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("dataset")
    ap.add_argument("model")
    ap.add_argument("--bin", default="target/release/seqrec")
    ap.add_argument("--k", type=int, default=3)
    args = ap.parse_args()

    pois = json.loads(Path(args.dataset).read_text())["pois"]["pois"]
    m = len(pois)
    worst = 0.0
    checked = 0
    for poi in pois:
        for length in range(2, min(m, 6) + 1):
            common = ["--dataset", args.dataset, "--model", args.model,
                      "--start", str(poi["source_id"]), "--length", str(length), "--k", str(args.k)]
            pred = subprocess.run([args.bin, "predict", *common], check=True, capture_output=True, text=True)
            scores = [float(line.split("\t")[1]) for line in pred.stdout.splitlines()]
            with tempfile.TemporaryDirectory() as out:
                subprocess.run([args.bin, "export-ilp", *common, "--out", out], check=True, capture_output=True)
                for r, expected in enumerate(scores, start=1):
                    got = solve(Path(out) / f"round_{r}.lp")
                    worst = max(worst, abs(got - expected))
                    checked += 1
    print(f"checked {checked} solves, max |difference| = {worst:.2e}")
    return 0 if worst < 1e-5 else 1


if __name__ == "__main__":
    sys.exit(main())
