"""Rerun a configured study over several master seeds and tabulate the outcome.

Domains are simulated once; only the training seeds change. Each seed takes
a few minutes on one CPU core.

    python3 scripts/seed_survey.py configs/reference.cfg --seeds 1-12
"""
import argparse
import sys
from dataclasses import replace

from mpca_tl import config
from mpca_tl.pipeline import run_procedure
from mpca_tl.signal_lab import build_domain

from run_reference import ordering_holds


def parse_seeds(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        lo, _, hi = part.partition("-")
        out += range(int(lo), int(hi or lo) + 1)
    return out


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config", nargs="?", default="configs/reference.cfg")
    p.add_argument("--seeds", default="1-12", help="e.g. 1-12 or 1,3,5")
    args = p.parse_args(argv)
    cfg = config.load(args.config)
    source, target = (build_domain(d.scenario, d.network, cfg.experiment.copies, cfg.snr_range)
                      for d in (cfg.source, cfg.target))
    hits = 0
    seeds = parse_seeds(args.seeds)
    print(f"{'seed':>4}  " + "  ".join(f"{m:>15}" for m in ("S-CNN", "FT", "MPCA-FT")) + "  ordering")
    for seed in seeds:
        rep = run_procedure(source, target, replace(cfg.experiment, seed=seed))
        ok = ordering_holds(rep)
        hits += ok
        cells = "  ".join(f"{rep.rmse[m][0]:7.2f}/{rep.rmse[m][1]:7.2f}" for m in ("S-CNN", "FT", "MPCA-FT"))
        print(f"{seed:>4}  {cells}  {'yes' if ok else 'no'}", flush=True)
    print(f"ordering held for {hits} of {len(seeds)} seeds")
    return 0


if __name__ == "__main__":
    sys.exit(main())
