#!/usr/bin/env python3
"""Same sweep on taxi cell-entry data: a T-Drive directory if given, else the generated sample."""
import argparse
from dataclasses import replace
from pathlib import Path

from patterndp.experiment import ExperimentPlan, run_experiment, summarize, write_csv

from run_fig4_synthetic import print_table

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--plan", default=ROOT / "plans" / "taxi_sample.json")
    ap.add_argument("--tdrive-dir", help="directory of real T-Drive *.txt files")
    ap.add_argument("--out", default="results_taxi.csv")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    plan = ExperimentPlan.load(args.plan)
    if args.tdrive_dir:
        plan = replace(plan, dataset={"kind": "tdrive", "dir": args.tdrive_dir})
    rows = run_experiment(plan, jobs=args.jobs)
    write_csv(rows, args.out)
    print_table(plan, summarize(rows))


if __name__ == "__main__":
    main()
