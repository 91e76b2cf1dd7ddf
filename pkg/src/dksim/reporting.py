"""CSV tables, log-log slope fits and SVG plots for experiment output.

Every CSV written here re-parses into the structure that produced it, and
the SVG plots are pure views of CSV contents: points from the difference
table, fitted lines from the slope table, no further computation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .moments import MomentEstimate


@dataclass
class MomentRow:
    model: str
    j1: int
    j2: int
    T1: float
    T2: float
    h: float
    N: int
    M: int
    mean: float
    stderr: float


MOMENT_FIELDS = ["model", "j1", "j2", "T1", "T2", "h", "N", "M", "mean", "stderr"]


def write_moment_csv(path, rows: Sequence[MomentRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(MOMENT_FIELDS)
        for r in rows:
            w.writerow(
                [
                    r.model,
                    r.j1,
                    r.j2,
                    "%.17g" % r.T1,
                    "%.17g" % r.T2,
                    "%.17g" % r.h,
                    r.N,
                    r.M,
                    "%.17g" % r.mean,
                    "%.17g" % r.stderr,
                ]
            )


def read_moment_csv(path) -> list[MomentRow]:
    out = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            out.append(
                MomentRow(
                    model=rec["model"],
                    j1=int(rec["j1"]),
                    j2=int(rec["j2"]),
                    T1=float(rec["T1"]),
                    T2=float(rec["T2"]),
                    h=float(rec["h"]),
                    N=int(rec["N"]),
                    M=int(rec["M"]),
                    mean=float(rec["mean"]),
                    stderr=float(rec["stderr"]),
                )
            )
    return out


@dataclass
class ConvergenceRow:
    """One sweep point: |difference of moments| with its combined error."""

    axis: str  # "h" or "N"
    value: float
    j1: int
    j2: int
    model: str
    diff: float
    stderr: float

    @property
    def significant(self) -> bool:
        return self.diff > 3.0 * self.stderr


@dataclass
class ConvergenceReport:
    """Log-log slope of |moment difference| against the sweep variable.

    The fit uses least squares over the 3-sigma significant rows only; if
    fewer than three rows are significant the report is noise-limited and
    carries no slope.  The half width is two standard errors of the
    fitted slope.
    """

    axis: str
    j1: int
    j2: int
    model: str
    rows: list[ConvergenceRow]
    slope: float | None = None
    half_width: float | None = None
    intercept: float | None = None
    noise_limited: bool = True

    @classmethod
    def fit(cls, axis, j1, j2, model, rows: Sequence[ConvergenceRow]):
        rep = cls(axis, j1, j2, model, list(rows))
        good = [r for r in rows if r.significant and r.diff > 0]
        if len(good) < 3:
            return rep
        x = np.log([r.value for r in good])
        y = np.log([r.diff for r in good])
        (slope, intercept), cov = np.polyfit(x, y, 1, cov=True)
        rep.slope = float(slope)
        rep.intercept = float(intercept)
        rep.half_width = float(2.0 * math.sqrt(max(cov[0, 0], 0.0)))
        rep.noise_limited = False
        return rep


DIFF_FIELDS = ["axis", "value", "j1", "j2", "model", "diff", "stderr", "significant"]
SLOPE_FIELDS = [
    "axis",
    "j1",
    "j2",
    "model",
    "slope",
    "half_width",
    "intercept",
    "noise_limited",
    "n_significant",
]


def write_difference_csv(path, rows: Sequence[ConvergenceRow]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(DIFF_FIELDS)
        for r in rows:
            w.writerow(
                [
                    r.axis,
                    "%.17g" % r.value,
                    r.j1,
                    r.j2,
                    r.model,
                    "%.17g" % r.diff,
                    "%.17g" % r.stderr,
                    int(r.significant),
                ]
            )


def read_difference_csv(path) -> list[ConvergenceRow]:
    out = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            out.append(
                ConvergenceRow(
                    axis=rec["axis"],
                    value=float(rec["value"]),
                    j1=int(rec["j1"]),
                    j2=int(rec["j2"]),
                    model=rec["model"],
                    diff=float(rec["diff"]),
                    stderr=float(rec["stderr"]),
                )
            )
    return out


def write_slope_csv(path, reports: Sequence[ConvergenceReport]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SLOPE_FIELDS)
        for r in reports:
            w.writerow(
                [
                    r.axis,
                    r.j1,
                    r.j2,
                    r.model,
                    "" if r.slope is None else "%.17g" % r.slope,
                    "" if r.half_width is None else "%.17g" % r.half_width,
                    "" if r.intercept is None else "%.17g" % r.intercept,
                    int(r.noise_limited),
                    sum(1 for row in r.rows if row.significant),
                ]
            )


def estimates_to_rows(
    estimates: Sequence[MomentEstimate],
    tags: Sequence[tuple[int, int]],
    T1: float,
    T2: float | None,
    h: float,
    N: int,
) -> list[MomentRow]:
    rows = []
    for est, (j1, j2) in zip(estimates, tags):
        rows.append(
            MomentRow(
                model=est.model,
                j1=j1,
                j2=j2,
                T1=T1,
                T2=T2 if T2 is not None else float("nan"),
                h=h,
                N=N,
                M=est.M,
                mean=est.mean,
                stderr=est.stderr,
            )
        )
    return rows


def plot_convergence_svg(
    diff_csv, slope_csv, out_svg, title: str = ""
) -> None:
    """Log-log SVG of |moment differences| with the stored fitted lines.

    Reads both CSVs back; nothing is recomputed here.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_difference_csv(diff_csv)
    slopes = {}
    with open(slope_csv, newline="") as f:
        for rec in csv.DictReader(f):
            key = (int(rec["j1"]), int(rec["j2"]), rec["model"])
            if rec["slope"]:
                slopes[key] = (float(rec["slope"]), float(rec["intercept"]))

    fig, ax = plt.subplots(figsize=(6, 4.5))
    keys = sorted({(r.j1, r.j2, r.model) for r in rows})
    for j1, j2, model in keys:
        pts = [r for r in rows if (r.j1, r.j2, r.model) == (j1, j2, model)]
        x = np.array([p.value for p in pts])
        y = np.array([p.diff for p in pts])
        e = np.array([p.stderr for p in pts])
        label = f"({j1},{j2}) {model}"
        ax.errorbar(x, y, yerr=e, marker="o", linestyle="-", capsize=2, label=label)
        if (j1, j2, model) in slopes:
            s, b = slopes[(j1, j2, model)]
            xs = np.array([x.min(), x.max()])
            ax.plot(xs, np.exp(b) * xs**s, "--", alpha=0.6)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(rows[0].axis if rows else "value")
    ax.set_ylabel("|moment difference|")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_svg, format="svg")
    plt.close(fig)


def plot_curves_svg(csv_paths: Sequence, labels: Sequence[str], out_svg, title=""):
    """Line plot of index,x,value CSV curves (sample-path figures)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for path, label in zip(csv_paths, labels):
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        ax.plot(data[:, 1], data[:, 2], label=label)
    ax.set_xlabel("x")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_svg, format="svg")
    plt.close(fig)
