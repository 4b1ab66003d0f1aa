"""Command-line entry point: ``qdelay run | lmi | max-delay | validate``."""

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .errors import QDelayError
from .experiment import (PRESET_PAIRS, export_csv, load_config, preset, preset_names,
                         run_ensemble)
from .lmi import LmiProblem, max_stable_delay, search_feasible
from .quantum import validate_hamiltonians

EXIT_CODES = {
    "config": 2,
    "unknown-preset": 2,
    "contract": 2,
    "condition-violation": 3,
    "numerical-blowup": 4,
    "integration-diverged": 4,
    "partial-results": 5,
    "infeasible-at-zero": 6,
    "io": 7,
}
EXIT_NOT_FOUND = 1


def _configs(args):
    """List of ``(subdir, config)`` selected by ``--preset`` / ``--config``."""
    if args.config:
        runs = [("", load_config(args.config))]
    elif args.preset in PRESET_PAIRS:
        runs = [(name, preset(name)) for name in PRESET_PAIRS[args.preset]]
    else:
        runs = [("", preset(args.preset))]
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.trajectories is not None:
        changes["n_traj"] = args.trajectories
    if args.horizon is not None:
        changes["horizon"] = args.horizon
    if args.out is not None:
        changes["output_dir"] = args.out
    return [(sub, cfg.replace(**changes)) for sub, cfg in runs]


def cmd_run(args):
    for sub, cfg in _configs(args):
        summary = run_ensemble(cfg, check_physical=args.check_physical, lmi_check=args.lmi_check)
        out = os.path.join(cfg.output_dir, sub) if sub else cfg.output_dir
        for path in export_csv(summary, out):
            print(path)
        i = len(summary.t) - 1
        print(f"{sub or 'run'}: t={summary.t[i]:.12g} v_mean={summary.v_mean[i]:.12g} "
              f"v_stderr={summary.v_stderr[i]:.12g}")
    return 0


def cmd_lmi(args):
    report = search_feasible(LmiProblem(args.tau, args.k), budget=args.budget, seed=args.seed)
    print("\n".join(report.as_lines(prefix="")))
    return 0 if report.feasible else EXIT_NOT_FOUND


def cmd_max_delay(args):
    bracket = max_stable_delay(args.k, precision=args.precision, tau_max=args.tau_max,
                               budget=args.budget, seed=args.seed)
    print(f"k={bracket.k:.12g}")
    print(f"tau_lower={bracket.lower:.12g}")
    print(f"tau_upper={bracket.upper:.12g}")
    print("note=feasibility assumed monotone in tau (heuristic)")
    return 0


def cmd_validate(args):
    cfg = load_config(args.config) if args.config else preset(args.preset)
    spec = cfg.system()
    if args.mutant == "h1-zero":
        spec = spec.replace(h1=0 * spec.h1)
    elif args.mutant == "h2-identity":
        spec = spec.replace(h2=np.eye(spec.dim, dtype=complex))
    report = validate_hamiltonians(spec, samples=args.samples, seed=args.seed)
    for key, value in report.as_dict().items():
        print(f"{key}={value}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="qdelay", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an ensemble and write CSV output")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(set(preset_names()) | set(PRESET_PAIRS)))
    src.add_argument("--config", help="flat key=value file")
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory")
    run.add_argument("--trajectories", type=int, help="override n_traj")
    run.add_argument("--horizon", type=float, help="override the final time T")
    run.add_argument("--lmi-check", action="store_true",
                     help="attach an LMI feasibility report to meta.txt")
    run.add_argument("--check-physical", action="store_true",
                     help="record worst physicality errors in meta.txt")
    run.set_defaults(func=cmd_run)

    lmi = sub.add_parser("lmi", help="search for an LMI certificate at (tau, k)")
    lmi.add_argument("--tau", type=float, required=True)
    lmi.add_argument("--k", type=float, default=1.0)
    lmi.add_argument("--budget", type=int, default=10_000)
    lmi.add_argument("--seed", type=int, default=0)
    lmi.set_defaults(func=cmd_lmi)

    md = sub.add_parser("max-delay", help="bisect for the largest certified delay")
    md.add_argument("--k", type=float, default=1.0)
    md.add_argument("--precision", type=float, default=0.05)
    md.add_argument("--tau-max", type=float, default=5.0)
    md.add_argument("--budget", type=int, default=2000)
    md.add_argument("--seed", type=int, default=0)
    md.set_defaults(func=cmd_max_delay)

    val = sub.add_parser("validate", help="check the structural Hamiltonian conditions")
    vsrc = val.add_mutually_exclusive_group()
    vsrc.add_argument("--preset", default="fig1", choices=preset_names())
    vsrc.add_argument("--config")
    val.add_argument("--samples", type=int, default=1000)
    val.add_argument("--seed", type=int, default=0)
    val.add_argument("--mutant", choices=["h1-zero", "h2-identity"],
                     help="validate a deliberately broken variant")
    val.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except QDelayError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_CODES["io"]


if __name__ == "__main__":
    sys.exit(main())
