#!/usr/bin/env python3
"""Optimized key rate at 1000 km as a function of the HEG trial rate.

Usage:
    python scripts/fig6_trial_rate.py [--out fig6.csv] [--rates 1e3,2e3,...]
"""
import argparse

from qrepeater.cli import CSV_COLUMNS, report_row
from qrepeater.network_model import NetworkParams
from qrepeater.optimizer import sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="fig6.csv")
    ap.add_argument("--rates", default="1e3,2e3,5e3,1e4,2.5e4,5e4,1e5")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    rates = [float(x) for x in args.rates.split(",")]

    skr = {}
    with open(args.out, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for params, res in sweep(NetworkParams(), {"t_HEG": [1.0 / f for f in rates]}, workers=args.workers):
            rate = 1.0 / params.t_HEG
            skr[rate] = res.best_report.R_SKR
            fh.write(",".join(report_row(params, res.best_plan, res.best_report)) + "\n")
            print(f"{rate / 1e3:7.1f} kHz  SKR={skr[rate]:.4g} Hz  {res.best_plan}", flush=True)

    values = [skr[r] for r in sorted(skr)]
    print("non-decreasing:", all(b >= a - 1e-12 for a, b in zip(values, values[1:])))
    if 2.5e4 in skr and 1e5 in skr and skr[2.5e4] > 0:
        print(f"SKR(100 kHz) / SKR(25 kHz) = {skr[1e5] / skr[2.5e4]:.3f}")


if __name__ == "__main__":
    main()
