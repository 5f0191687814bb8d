#!/usr/bin/env python3
"""Optimized key rate and final-pair errors versus network length, next to the repeaterless bound.

Also prints the zeroed-source error attribution at each optimum.

Usage:
    python scripts/fig5_length_sweep.py [--out fig5.csv] [--lengths 250,500,...]
"""
import argparse

from qrepeater.cli import CSV_COLUMNS, error_attribution, report_row
from qrepeater.network_model import NetworkParams, plob_bound
from qrepeater.optimizer import sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="fig5.csv")
    ap.add_argument("--lengths", default="250,500,750,1000,1250,1500,1750,2000")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--plob-rate", type=float, default=1e9, help="repetition rate for the bound (Hz)")
    args = ap.parse_args()
    lengths = [float(x) for x in args.lengths.split(",")]

    base = NetworkParams()
    with open(args.out, "w") as fh:
        fh.write(",".join(CSV_COLUMNS + ("plob_Hz",)) + "\n")
        for params, res in sweep(base, {"L_tot": lengths}, workers=args.workers):
            plan, rep = res.best_plan, res.best_report
            bound = plob_bound(params.L_tot, params.L_att, args.plob_rate)
            fh.write(",".join(report_row(params, plan, rep) + [f"{bound:.9g}"]) + "\n")
            shares = error_attribution(params, plan)
            parts = " ".join(f"{k}={v:.3g}" for k, v in shares.items())
            print(f"L={params.L_tot:g} km  SKR={rep.R_SKR:.4g} Hz  PLOB={bound:.3g} Hz  "
                  f"P_E={plan.P_E} P_L={plan.P_L} N={plan.N} M={plan.M}  {parts}", flush=True)


if __name__ == "__main__":
    main()
