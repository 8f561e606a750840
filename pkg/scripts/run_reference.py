"""Run one configured adaptation study and check the expected RMSE ordering.

    python3 scripts/run_reference.py configs/reference.cfg --out runs/reference
"""
import argparse
import sys
from pathlib import Path

from mpca_tl import cli
from mpca_tl.pipeline import ExperimentReport


def ordering_holds(rep: ExperimentReport) -> bool:
    r = rep.rmse
    return all(r["MPCA-FT"][i] <= r["FT"][i] < r["S-CNN"][i] for i in (0, 1))


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config", nargs="?", default="configs/reference.cfg")
    p.add_argument("--out", help="report directory (defaults to the config's out)")
    p.add_argument("--seed", type=int)
    args = p.parse_args(argv)
    run = ["run", "--config", args.config]
    if args.out:
        run += ["--out", args.out]
    if args.seed is not None:
        run += ["--seed", str(args.seed)]
    code = cli.main(run)
    if code:
        return code
    out = Path(args.out) if args.out else Path(cli.config.load(args.config).out)
    rep = ExperimentReport.from_csv((out / "report.csv").read_text())
    print("ordering MPCA-FT <= FT < S-CNN on both axes:", "yes" if ordering_holds(rep) else "no")
    return 0


if __name__ == "__main__":
    sys.exit(main())
