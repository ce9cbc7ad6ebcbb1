"""Command-line entry point: ``dnrr simulate|denoise|rho-sweep|report``.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 I/O.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .dynamics import SimulationError
from .gsbr import RankDeficiencyError
from .io import ParseError
from .orchestrator import ChainError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("dnrr")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config")
    common.add_argument("--preset", help="named preset, e.g. henon-3pct or henon-3pct-desk")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel chains for sweeps and batches")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dnrr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a noisy trajectory")
    d = sub.add_parser("denoise", parents=[common], help="run the sampler and write a report")
    d.add_argument("--trajectory", type=Path, help="input series (default: simulate from config)")
    d.add_argument("--rho", type=float)
    s = sub.add_parser("rho-sweep", parents=[common], help="denoise one series over a rho grid")
    s.add_argument("--trajectory", type=Path)
    s.add_argument("--rho-grid", type=float, nargs="+")
    r = sub.add_parser("report", parents=[common], help="rebuild the report of a run directory")
    r.add_argument("directory", nargs="?", type=Path)
    sub.add_parser("presets", help="list preset names")
    return p


def _overrides(args) -> dict:
    over: dict = {}
    if args.seed is not None:
        over["seed"] = args.seed
        over["chain"] = {"seed": args.seed}
    if getattr(args, "trajectory", None) is not None:
        over["trajectory"] = str(args.trajectory)
    if getattr(args, "rho", None) is not None:
        over.setdefault("chain", {})["rho"] = args.rho
    if getattr(args, "rho_grid", None):
        over["rho_grid"] = list(args.rho_grid)
    return over


def _run(args) -> int:
    if args.command == "presets":
        print("\n".join(experiments.preset_names()))
        return EXIT_OK
    if args.command == "report":
        directory = args.directory or args.out
        if directory is None:
            raise experiments.ConfigError("report needs a run directory")
        rep = experiments.build_report(directory)
        print((Path(directory) / "summary.md").read_text(), end="")
        return EXIT_OK

    cfg = experiments.load_config(args.config, args.preset, _overrides(args))
    out = args.out or Path("runs") / (cfg.preset or args.command)
    if args.command == "simulate":
        path, traj = experiments.cmd_simulate(cfg, out)
        eta = traj.meta.get("eta")
        print(f"wrote {path} (n={traj.n}, eta={'-' if eta is None else format(eta, '.3f')}%, "
              f"retries={traj.meta['escapes'] + traj.meta['eta_rejections']})")
    elif args.command == "denoise":
        for rep in experiments.cmd_denoise(cfg, out, args.jobs):
            print(f"rho={rep['rho']:g} E0={rep['e0']:.5g} E_dyn(x)={rep['edyn_x']:.5g} "
                  f"E_dyn(y)={rep['edyn_y']:.5g} R_dyn={rep['rdyn']:.4f}")
        print(f"wrote {out}")
    elif args.command == "rho-sweep":
        rows, trend = experiments.cmd_rho_sweep(cfg, out, args.jobs)
        for r in rows:
            print(f"rho={r['rho']:<10g} E0={r['e0']:.5g} E_dyn(y)={r['edyn_y']:.5g} "
                  f"R_dyn={r['rdyn']:.4f} {r['error']}")
        print(f"spearman(rho, E0)={trend['spearman_rho_e0']:.3f} "
              f"spearman(rho, E_dyn)={trend['spearman_rho_edyn_y']:.3f}")
        if all(r["error"] for r in rows):
            return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="ignore"):
            return _run(args)
    except experiments.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, ChainError, RankDeficiencyError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ParseError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
