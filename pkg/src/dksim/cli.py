"""Command-line interface.

Subcommands:
    run <preset>        bundled experiments (fig2-sample, fig3-conv-h,
                        fig4-sample, fig5-conv-n, fig6-linearised)
    simulate            one/many Dean-Kawasaki trajectories, snapshots + monitors
    moments             moment table for one configuration
    sweep-h             moment differences across grids, slope report
    sweep-n             moment differences across particle counts
    compare-linearised  nonlinear vs linearised error comparison
    negative-part       negativity monitors across particle counts
    validate            static configuration diagnostics

Exit codes: 0 success, 2 configuration error, 3 numerical failure (NaN).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as cfgmod
from . import experiments
from .config import ConfigFileError, Diagnostic, ExperimentConfig
from .dynamics import NumericalError
from .presets import PRESETS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key=value configuration file")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--workers", type=int, help="worker processes for Monte Carlo")
    p.add_argument("--scale", choices=("paper", "desk"), help="experiment scale")
    p.add_argument("--rho0", help="initial density formula tag")
    p.add_argument("--N", help="comma-separated particle counts")
    p.add_argument("--ks", help="comma-separated grid exponents (L = 2^k)")
    p.add_argument("--dt", type=float, help="time step")
    p.add_argument("--T1", type=float, help="first observation time")
    p.add_argument("--T2", help="second observation time or 'none'")
    p.add_argument("--M", type=int, help="Monte Carlo realizations")
    p.add_argument("--moments", help="moment list, e.g. '2:0,1:1'")
    p.add_argument("--models", help="model list, e.g. 'dk,particles'")
    p.add_argument(
        "--paper-literal-bdf2",
        action="store_true",
        default=None,
        help="use the literal (2/3)*dt*Lap BDF2 drift coefficient",
    )
    p.add_argument(
        "--normalize-l2",
        action="store_true",
        default=None,
        help="normalize test functions to unit L2 norm",
    )


def _collect_config(args: argparse.Namespace) -> ExperimentConfig:
    kv: dict[str, str] = {}
    if args.config is not None:
        kv.update(cfgmod.parse_kv(args.config.read_text()))
    overrides = {
        "rho0": args.rho0,
        "N": args.N,
        "ks": args.ks,
        "dt": args.dt,
        "T1": args.T1,
        "T2": args.T2,
        "M": args.M,
        "moments": args.moments,
        "models": args.models,
        "seed": args.seed,
        "workers": args.workers,
        "scale": args.scale,
    }
    for key, value in overrides.items():
        if value is not None:
            kv[key] = str(value)
    if args.paper_literal_bdf2:
        kv["paper_literal_bdf2"] = "true"
    if args.normalize_l2:
        kv["normalize_l2"] = "true"
    return ExperimentConfig.from_mapping(kv)


def _preset_config(args: argparse.Namespace) -> ExperimentConfig:
    scale = args.scale or "desk"
    cfg = ExperimentConfig.from_preset(PRESETS[args.preset], scale)
    for attr, value in (
        ("seed", args.seed),
        ("workers", args.workers),
        ("M", args.M),
    ):
        if value is not None:
            setattr(cfg, attr, value)
    if args.paper_literal_bdf2:
        cfg.paper_literal_bdf2 = True
    if args.normalize_l2:
        cfg.normalize_l2 = True
    return cfg


def _print_diagnostics(diags: list[Diagnostic]) -> None:
    for d in diags:
        print(f"[{d.level}] {d.message}")


def _validated(cfg: ExperimentConfig) -> ExperimentConfig:
    diags = cfgmod.validate(cfg)
    _print_diagnostics(diags)
    if cfgmod.has_errors(diags):
        raise ConfigFileError("configuration rejected")
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dksim",
        description="Finite-difference Dean-Kawasaki simulations, exact "
        "Brownian references, and Monte Carlo moment comparisons.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a bundled preset")
    p_run.add_argument("preset", choices=sorted(PRESETS))
    _add_common(p_run)

    for name in (
        "simulate",
        "moments",
        "sweep-h",
        "sweep-n",
        "compare-linearised",
        "negative-part",
        "validate",
    ):
        _add_common(sub.add_parser(name))

    args = parser.parse_args(argv)

    try:
        if args.command == "run":
            cfg = _validated(_preset_config(args))
            experiments.run_preset(args.preset, cfg, args.out)
        elif args.command == "validate":
            cfg = _collect_config(args)
            diags = cfgmod.validate(cfg)
            _print_diagnostics(diags)
            if cfgmod.has_errors(diags):
                return EXIT_CONFIG
        else:
            cfg = _validated(_collect_config(args))
            outdir = args.out
            if args.command == "simulate":
                experiments.run_sample(cfg, outdir)
            elif args.command == "moments":
                experiments.run_moments(cfg, outdir)
            elif args.command == "sweep-h":
                experiments.run_sweep_h(cfg, outdir)
            elif args.command == "sweep-n":
                experiments.run_sweep_n(cfg, outdir)
            elif args.command == "compare-linearised":
                if "dk-linearised" not in cfg.models:
                    cfg.models = list(cfg.models) + ["dk-linearised"]
                if "particles" not in cfg.models:
                    cfg.models = list(cfg.models) + ["particles"]
                experiments.run_sweep_h(cfg, outdir, stem="compare-linearised")
            elif args.command == "negative-part":
                experiments.run_negative_part(cfg, outdir)
    except (ConfigFileError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
