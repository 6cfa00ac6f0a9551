"""Run (or reload) the replication study and print the ordering tables.

    python scripts/run_study.py configs/protocol-a.toml --out runs/protocol-a
    python scripts/run_study.py --report runs/protocol-a/report.csv

For every metric and query point the table lists the median (or, for the
rate ratio, the interquartile range) at each sample size and whether the
sequence strictly decreases.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from hitsurv.cli import main as cli_main
from hitsurv.risk import RiskReport

SUMMARIES = {
    "I_risk": ("median", np.median),
    "coeff_sup_err": ("median", np.median),
    "lambda_ratio": ("IQR", lambda v: np.subtract(*np.percentile(v, [75, 25]))),
}


def ordering_table(report: RiskReport) -> list[str]:
    sizes = sorted({r.n for r in report.rows})
    zs = sorted({r.z for r in report.rows})
    lines = [f"{'metric':<22}{'z':>5}  " + "".join(f"{'n=' + str(n):>11}" for n in sizes) + "  decreasing"]
    for metric, (name, stat) in SUMMARIES.items():
        for z in zs:
            vals = [stat(report.values(metric, n, z)) for n in sizes]
            mono = all(b < a for a, b in zip(vals, vals[1:]))
            cells = "".join(f"{v:>11.3g}" for v in vals)
            lines.append(f"{name + ' ' + metric:<22}{z:>5.2f}  {cells}  {'yes' if mono else 'no'}")
    return lines


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config", nargs="?", help="experiment TOML to run")
    parser.add_argument("--out", default="runs/study", help="output directory for a fresh run")
    parser.add_argument("--report", help="existing report.csv to summarise instead of running")
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args(argv)
    if args.report:
        path = Path(args.report)
    elif args.config:
        bench = ["bench", "--config", args.config, "--out", args.out]
        if args.workers:
            bench += ["--workers", str(args.workers)]
        if cli_main(bench):
            return 1
        path = Path(args.out) / "report.csv"
    else:
        parser.error("give a config to run or --report to summarise")
    report = RiskReport.from_csv(path.read_text())
    print("\n".join(ordering_table(report)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
