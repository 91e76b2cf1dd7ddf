"""Experiment orchestration: moment tables, sweeps, comparisons, samples.

These runners sit between the CLI and the simulation modules: they build
placements and test functions from a validated ExperimentConfig, run the
Monte Carlo estimates, and write the CSV/SVG artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .dynamics import (
    SchemeConfig,
    TrajectoryEngine,
    negative_part_report,
    run_trajectory,
)
from .grid import Grid, GridFunction, dump_csv, interpolate
from .heat import TestFunction, discrete_forward_flow
from .moments import MomentEstimate, MomentLab, MomentSpec, moment_difference
from .particles import InitialPlacement, place_particles
from .presets import DENSITY_BOUNDS, PRESETS, initial_density, make_test_pair
from . import reporting


@dataclass
class MomentBlock:
    """All requested moment estimates for one (grid, particle count) cell."""

    L: int
    N: int
    estimates: dict[str, list[MomentEstimate]]  # model -> per-moment estimates


def _specs(cfg: ExperimentConfig, phi1: TestFunction, phi2: TestFunction):
    specs = []
    for j1, j2 in cfg.moments:
        entries = [(cfg.T1, j1, phi1)]
        if j2 > 0:
            entries.append((cfg.T2, j2, phi2))
        specs.append(MomentSpec.build(entries, tag=f"{j1},{j2}"))
    return specs


def _scheme(cfg: ExperimentConfig) -> SchemeConfig:
    return SchemeConfig(
        dt=cfg.dt,
        model="nonlinear",
        noise_seed=cfg.seed,
        paper_literal_bdf2=cfg.paper_literal_bdf2,
    )


def estimate_block(
    cfg: ExperimentConfig,
    L: int,
    N: int,
    phi1: TestFunction,
    phi2: TestFunction,
) -> MomentBlock:
    grid = Grid(1, L)
    rho0 = initial_density(cfg.rho0, cfg.bandwidth)
    placement = place_particles(rho0, grid, N)
    lab = MomentLab(placement, _scheme(cfg), workers=cfg.workers)
    specs = _specs(cfg, phi1, phi2)
    estimates = {
        model: lab.estimate_moments(specs, model, cfg.M, cfg.seed)
        for model in cfg.models
    }
    return MomentBlock(L=L, N=N, estimates=estimates)


def _blocks_to_artifacts(
    cfg: ExperimentConfig,
    blocks: list[MomentBlock],
    axis: str,
    outdir: Path,
    stem: str,
) -> list[reporting.ConvergenceReport]:
    """Write moment, difference and slope CSVs plus the SVG for a sweep."""
    moment_rows = []
    diff_rows = []
    for block in blocks:
        h = 2.0 * np.pi / block.L
        for model, ests in block.estimates.items():
            moment_rows += reporting.estimates_to_rows(
                ests, cfg.moments, cfg.T1, cfg.T2, h, block.N
            )
        if "particles" not in block.estimates:
            continue
        ref = block.estimates["particles"]
        for model, ests in block.estimates.items():
            if model == "particles":
                continue
            for est, refest, (j1, j2) in zip(ests, ref, cfg.moments):
                d = moment_difference(est, refest)
                diff_rows.append(
                    reporting.ConvergenceRow(
                        axis=axis,
                        value=h if axis == "h" else float(block.N),
                        j1=j1,
                        j2=j2,
                        model=model,
                        diff=d.diff,
                        stderr=d.combined_stderr,
                    )
                )

    reports = []
    for model in cfg.models:
        if model == "particles":
            continue
        for j1, j2 in cfg.moments:
            rows = [
                r
                for r in diff_rows
                if (r.j1, r.j2, r.model) == (j1, j2, model)
            ]
            if rows:
                reports.append(
                    reporting.ConvergenceReport.fit(axis, j1, j2, model, rows)
                )

    outdir.mkdir(parents=True, exist_ok=True)
    reporting.write_moment_csv(outdir / f"{stem}-moments.csv", moment_rows)
    if diff_rows:
        reporting.write_difference_csv(outdir / f"{stem}-differences.csv", diff_rows)
        reporting.write_slope_csv(outdir / f"{stem}-slopes.csv", reports)
        reporting.plot_convergence_svg(
            outdir / f"{stem}-differences.csv",
            outdir / f"{stem}-slopes.csv",
            outdir / f"{stem}.svg",
            title=stem,
        )
    return reports


def run_sweep_h(cfg: ExperimentConfig, outdir: Path, stem: str = "sweep-h"):
    """Moment differences across grids L = 2^k at fixed particle count."""
    rho0 = initial_density(cfg.rho0, cfg.bandwidth)
    phi1, phi2 = make_test_pair(rho0, cfg.T1, cfg.bandwidth, cfg.normalize_l2)
    N = cfg.particle_counts[0]
    blocks = [estimate_block(cfg, 2**k, N, phi1, phi2) for k in cfg.ks]
    return _blocks_to_artifacts(cfg, blocks, "h", outdir, stem)


def run_sweep_n(cfg: ExperimentConfig, outdir: Path, stem: str = "sweep-n"):
    """Moment differences across particle counts at fixed grid."""
    rho0 = initial_density(cfg.rho0, cfg.bandwidth)
    phi1, phi2 = make_test_pair(rho0, cfg.T1, cfg.bandwidth, cfg.normalize_l2)
    L = 2 ** cfg.ks[0]
    blocks = [estimate_block(cfg, L, N, phi1, phi2) for N in cfg.particle_counts]
    return _blocks_to_artifacts(cfg, blocks, "N", outdir, stem)


def run_moments(cfg: ExperimentConfig, outdir: Path, stem: str = "moments"):
    """Single-cell moment table (first grid, first particle count)."""
    rho0 = initial_density(cfg.rho0, cfg.bandwidth)
    phi1, phi2 = make_test_pair(rho0, cfg.T1, cfg.bandwidth, cfg.normalize_l2)
    block = estimate_block(cfg, 2 ** cfg.ks[0], cfg.particle_counts[0], phi1, phi2)
    return _blocks_to_artifacts(cfg, [block], "h", outdir, stem)


def run_sample(cfg: ExperimentConfig, outdir: Path, stem: str = "sample"):
    """One trajectory snapshot next to its mean-field evolution."""
    outdir.mkdir(parents=True, exist_ok=True)
    L = 2 ** cfg.ks[0]
    N = cfg.particle_counts[0]
    grid = Grid(1, L)
    rho0 = initial_density(cfg.rho0, cfg.bandwidth)
    phi1, phi2 = make_test_pair(rho0, cfg.T1, cfg.bandwidth, cfg.normalize_l2)
    placement = place_particles(rho0, grid, N)

    initial = placement.matched_density
    meanfield = discrete_forward_flow(initial, cfg.T1)
    snaps, monitor = run_trajectory(placement, _scheme(cfg), [cfg.T1], realization=0)

    files = {
        "initial": initial,
        "mean-field": meanfield,
        "dk-sample": snaps[0][1],
        "phi1": interpolate(phi1.eval, grid),
        "phi2": interpolate(phi2.eval, grid),
    }
    paths, labels = [], []
    for label, gridfn in files.items():
        path = outdir / f"{stem}-{label}.csv"
        dump_csv(gridfn, path)
        paths.append(path)
        labels.append(label)
    reporting.plot_curves_svg(paths[:3], labels[:3], outdir / f"{stem}-density.svg")
    reporting.plot_curves_svg(
        paths[3:], labels[3:], outdir / f"{stem}-test-functions.svg"
    )
    with open(outdir / f"{stem}-monitor.csv", "w") as f:
        f.write("realization,sup_neg_norm,min_density,mass_drift\n")
        f.write(
            "0,%.17g,%.17g,%.17g\n"
            % (monitor.sup_neg_norm, monitor.min_density, monitor.mass_drift)
        )
    return monitor


def run_negative_part(
    cfg: ExperimentConfig, outdir: Path, stem: str = "negative-part"
):
    """Negativity monitors across the configured particle counts."""
    outdir.mkdir(parents=True, exist_ok=True)
    L = 2 ** cfg.ks[0]
    grid = Grid(1, L)
    rho0 = initial_density(cfg.rho0, cfg.bandwidth)
    rho_min, rho_max = DENSITY_BOUNDS[cfg.rho0]
    scheme = _scheme(cfg)

    rows = []
    reports = []
    for N in cfg.particle_counts:
        placement = place_particles(rho0, grid, N)
        engine = TrajectoryEngine(placement, scheme, [cfg.T1], monitor=True)
        monitors = []
        batch = 256
        for lo in range(0, cfg.M, batch):
            _, mons = engine.run_batch(list(range(lo, min(lo + batch, cfg.M))))
            monitors += mons
        rep = negative_part_report(monitors, N, grid.h, rho_min, rho_max)
        reports.append(rep)
        rows.append(
            (
                N,
                grid.h,
                cfg.M,
                rep.mean_sup_neg,
                rep.stderr_sup_neg,
                rep.max_sup_neg,
                rep.fraction_negative,
                rep.envelope,
                int(rep.in_scaling_regime),
            )
        )

    with open(outdir / f"{stem}.csv", "w") as f:
        f.write(
            "N,h,M,mean_sup_neg,stderr_sup_neg,max_sup_neg,"
            "fraction_negative,envelope,in_scaling_regime\n"
        )
        for row in rows:
            f.write(
                "%d,%.17g,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n" % row
            )
    return reports


def run_preset(name: str, cfg: ExperimentConfig, outdir: Path):
    """Dispatch a named preset with its configured runner."""
    preset = PRESETS[name]
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "config.txt").write_text(cfg.echo())

    if preset.kind == "sample":
        return run_sample(cfg, outdir, stem=name)
    if preset.kind == "sweep-h":
        reports = []
        for N in preset.particle_counts(cfg.scale):
            sub = ExperimentConfig(**{**cfg.__dict__, "particle_counts": [N]})
            reports += run_sweep_h(sub, outdir, stem=f"{name}-N{N}")
        return reports
    if preset.kind == "sweep-n":
        return run_sweep_n(cfg, outdir, stem=name)
    if preset.kind == "compare-linearised":
        reports = []
        for N in preset.particle_counts(cfg.scale):
            sub = ExperimentConfig(**{**cfg.__dict__, "particle_counts": [N]})
            reports += run_sweep_h(sub, outdir, stem=f"{name}-N{N}")
        return reports
    raise ValueError(f"unknown preset kind {preset.kind!r}")
