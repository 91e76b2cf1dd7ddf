"""Experiment configuration: flat key=value files, validation, diagnostics.

The config format is deliberately flat text: one `key = value` per line,
`#` starts a comment, lists are comma separated.  Example:

    # moment sweep over h
    rho0    = bump6
    N       = 8192
    ks      = 3,4,5,6
    dt      = 0.001
    T1      = 0.4
    T2      = 0.32
    moments = 2:0, 1:1
    models  = dk,particles
    M       = 50000
    seed    = 1
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .presets import PRESETS, DENSITY_BOUNDS, Preset

# Below this grid spacing the finite-difference error no longer dominates
# the negative-part contribution in the reference experiments.
H_FLOOR = 2.0 * np.pi * 2.0**-7


class ConfigFileError(ValueError):
    """Malformed configuration text or invalid field values."""


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _ints(s: str) -> list[int]:
    return [int(tok) for tok in s.split(",") if tok.strip()]


def _moments(s: str) -> list[tuple[int, int]]:
    out = []
    for tok in s.split(","):
        tok = tok.strip()
        if not tok:
            continue
        j1, j2 = tok.split(":")
        out.append((int(j1), int(j2)))
    return out


@dataclass
class ExperimentConfig:
    """Everything one experiment run needs, validated before any simulation."""

    rho0: str = "bump6"
    particle_counts: list[int] = field(default_factory=lambda: [8192])
    ks: list[int] = field(default_factory=lambda: [6])  # grids L = 2^k
    dt: float = 0.001
    T1: float = 0.4
    T2: float | None = 0.32
    moments: list[tuple[int, int]] = field(default_factory=lambda: [(2, 0), (1, 1)])
    models: list[str] = field(default_factory=lambda: ["dk", "particles"])
    M: int = 50_000
    seed: int = 1
    workers: int = 1
    scale: str = "desk"
    normalize_l2: bool = False
    paper_literal_bdf2: bool = False
    bandwidth: int = 256

    @classmethod
    def from_mapping(cls, kv: dict[str, str]) -> "ExperimentConfig":
        cfg = cls()
        casts = {
            "rho0": ("rho0", str),
            "N": ("particle_counts", _ints),
            "ks": ("ks", _ints),
            "dt": ("dt", float),
            "T1": ("T1", float),
            "T2": ("T2", lambda s: None if s.lower() in ("", "none") else float(s)),
            "moments": ("moments", _moments),
            "models": ("models", lambda s: [m.strip() for m in s.split(",") if m.strip()]),
            "M": ("M", int),
            "seed": ("seed", int),
            "workers": ("workers", int),
            "scale": ("scale", str),
            "normalize_l2": ("normalize_l2", lambda s: s.lower() in ("1", "true", "yes")),
            "paper_literal_bdf2": (
                "paper_literal_bdf2",
                lambda s: s.lower() in ("1", "true", "yes"),
            ),
            "bandwidth": ("bandwidth", int),
        }
        for key, value in kv.items():
            if key not in casts:
                raise ConfigFileError(f"unknown configuration key {key!r}")
            attr, cast = casts[key]
            try:
                setattr(cfg, attr, cast(value))
            except ConfigFileError:
                raise
            except Exception as exc:
                raise ConfigFileError(f"bad value for {key!r}: {value!r} ({exc})")
        return cfg

    @classmethod
    def from_preset(cls, preset: Preset, scale: str) -> "ExperimentConfig":
        cfg = cls(
            rho0=preset.rho0,
            particle_counts=list(preset.particle_counts(scale)),
            ks=list(preset.ks(scale)),
            T1=preset.T1,
            T2=preset.T2,
            moments=list(preset.moments),
            M=preset.realizations(scale),
            scale=scale,
        )
        if preset.kind == "compare-linearised":
            cfg.models = ["dk", "dk-linearised", "particles"]
        elif preset.kind == "sample":
            cfg.models = ["dk"]
        return cfg

    def echo(self) -> str:
        """Round-trippable key=value rendering of this configuration."""
        lines = [
            f"rho0 = {self.rho0}",
            "N = " + ",".join(str(n) for n in self.particle_counts),
            "ks = " + ",".join(str(k) for k in self.ks),
            f"dt = {self.dt!r}",
            f"T1 = {self.T1!r}",
            f"T2 = {'none' if self.T2 is None else repr(self.T2)}",
            "moments = " + ",".join(f"{a}:{b}" for a, b in self.moments),
            "models = " + ",".join(self.models),
            f"M = {self.M}",
            f"seed = {self.seed}",
            f"workers = {self.workers}",
            f"scale = {self.scale}",
            f"normalize_l2 = {str(self.normalize_l2).lower()}",
            f"paper_literal_bdf2 = {str(self.paper_literal_bdf2).lower()}",
            f"bandwidth = {self.bandwidth}",
        ]
        return "\n".join(lines) + "\n"


@dataclass
class Diagnostic:
    level: str  # "error" | "warning" | "info"
    message: str


def validate(cfg: ExperimentConfig) -> list[Diagnostic]:
    """Static checks run before any simulation; errors abort with exit 2."""
    out: list[Diagnostic] = []

    if cfg.rho0 not in DENSITY_BOUNDS:
        out.append(Diagnostic("error", f"unknown initial density {cfg.rho0!r}"))
    if cfg.dt <= 0:
        out.append(Diagnostic("error", f"dt must be positive, got {cfg.dt}"))
    if cfg.M < 1:
        out.append(Diagnostic("error", f"M must be positive, got {cfg.M}"))

    times = [t for t in (cfg.T1, cfg.T2) if t is not None]
    for t in times:
        n = round(t / cfg.dt)
        if abs(n * cfg.dt - t) > 1e-12:
            out.append(
                Diagnostic(
                    "error", f"time {t} is not on the dt={cfg.dt} step lattice"
                )
            )
        else:
            out.append(Diagnostic("info", f"T={t}: {int(n)} steps of dt={cfg.dt}"))

    for k in cfg.ks:
        L = 2**k
        if L < 4:
            out.append(Diagnostic("error", f"grid 2^{k} has fewer than 4 nodes"))
            continue
        h = 2.0 * np.pi / L
        if h < H_FLOOR - 1e-15:
            out.append(
                Diagnostic(
                    "warning",
                    f"h = 2*pi*2^-{k} = {h:.5f} below the {H_FLOOR:.5f} floor: "
                    "negative-part error may dominate the h^2 rate",
                )
            )
        for N in cfg.particle_counts:
            if N < L:
                out.append(
                    Diagnostic(
                        "error",
                        f"N={N} < {L} grid nodes: cannot place a positive density",
                    )
                )
            elif h < 1.0 / N:
                out.append(
                    Diagnostic(
                        "warning",
                        f"h={h:.5f} < 1/N={1.0 / N:.2e}: outside the h >> N^(-1/d) "
                        "scaling regime",
                    )
                )

    for j1, j2 in cfg.moments:
        if j1 < 0 or j2 < 0 or j1 + j2 < 1:
            out.append(Diagnostic("error", f"invalid moment exponents ({j1},{j2})"))
        if j2 > 0 and cfg.T2 is None:
            out.append(
                Diagnostic("error", f"moment ({j1},{j2}) needs a second time T2")
            )

    known = {"dk", "dk-linearised", "particles", "dk-deterministic"}
    for m in cfg.models:
        if m not in known:
            out.append(Diagnostic("error", f"unknown model {m!r}"))

    return out


def has_errors(diags: list[Diagnostic]) -> bool:
    return any(d.level == "error" for d in diags)
