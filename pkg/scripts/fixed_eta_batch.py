"""Hénon map under the four two-scale noise densities, each tuned to about 3% noise."""
import argparse
from pathlib import Path

from dnrr import experiments
from dnrr.metrics import tail_flatness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--desk", action="store_true")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("runs/fixed_eta"))
    args = ap.parse_args()

    cfg = experiments.load_config(None, "henon-f2l-all" + ("-desk" if args.desk else ""))
    reports = experiments.run_batch(cfg, args.out, args.jobs)
    print(f"{'density':>8} {'TF':>5} {'eta%':>6} {'E0':>8} {'R_dyn':>6} {'PARE x%':>8}")
    for name, r in zip(cfg.batch, reports):
        level = int(name.split("-")[2])
        tf = tail_flatness(experiments.ExperimentConfig.from_mapping(experiments.preset(name)).noise_process())
        print(f"{'f2,' + str(level):>8} {tf:>5.2f} {r['eta']:>6.2f} {r['e0']:>8.5f} {r['rdyn']:>6.3f} "
              f"{r['pare_mean_x']:>8.3f}")


if __name__ == "__main__":
    main()
