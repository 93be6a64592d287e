#!/usr/bin/env python3
"""Write a T-Drive formatted random-walk sample (one file per taxi)."""
import argparse

from patterndp.datasets import TaxiSampleConfig, generate_tdrive_sample

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("out_dir")
ap.add_argument("--taxis", type=int, default=100)
ap.add_argument("--fixes", type=int, default=480)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()
paths = generate_tdrive_sample(args.out_dir, TaxiSampleConfig(n_taxis=args.taxis, n_fixes=args.fixes, seed=args.seed))
print(f"wrote {len(paths)} files to {args.out_dir}")
