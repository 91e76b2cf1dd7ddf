"""Finite-difference Dean-Kawasaki dynamics on the periodic grid (d = 1).

The scheme integrates

    d rho = (1/2) Lap_h rho dt + conservative square-root noise,

where the noise pairs sqrt(rho^+) against the centered discrete gradient
of the nodal basis, carries the 1/sqrt(N) fluctuation amplitude, and is
in discrete divergence form, so the total mass (rho, 1)_h is conserved
exactly along every trajectory.

Time discretisation: a mixed implicit-explicit Euler step with explicit
noise for the first step, then the two-step BDF2 scheme whose current
noise increment uses the amplitude at the current state and which
subtracts one third of the previous increment.  The implicit solves are
spectral (the operator is diagonal in Fourier space), hence exact up to
round-off in each mode.

Three model variants share the integrator: 'nonlinear' (amplitude from
the evolving state), 'linearised' (amplitude frozen at the deterministic
mean-field trajectory), and 'deterministic' (noise off).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import Grid, GridFunction, GridError, laplacian_values
from .particles import InitialPlacement
from . import rng


class NumericalError(RuntimeError):
    """NaN/Inf appeared in a trajectory (exit code 3 at the CLI)."""


class ConfigError(ValueError):
    """Invalid scheme configuration or record-time lattice violation."""


MODELS = ("nonlinear", "linearised", "deterministic")

# The BDF2 update for d rho = (1/2) Lap rho dt + ... carries the implicit
# drift (2/3) dt (1/2) Lap = (1/3) dt Lap.  The 'paper literal' variant
# uses (2/3) dt Lap instead (selectable, not consistency-preserving).
BDF2_DRIFT = 1.0 / 3.0
BDF2_DRIFT_LITERAL = 2.0 / 3.0


@dataclass(frozen=True)
class SchemeConfig:
    """Time-stepping configuration shared by all model variants."""

    dt: float = 0.001
    model: str = "nonlinear"
    noise_seed: int = 0
    paper_literal_bdf2: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")

    @property
    def bdf2_drift_coefficient(self) -> float:
        return BDF2_DRIFT_LITERAL if self.paper_literal_bdf2 else BDF2_DRIFT


def noise_amplitude(rho_values: np.ndarray) -> np.ndarray:
    """Positive-part square-root intensity sqrt(rho^+), elementwise."""
    return np.sqrt(np.maximum(rho_values, 0.0))


def assemble_noise(
    rho_for_amplitude: GridFunction, N: int, dW: GridFunction
) -> GridFunction:
    """Nodal contribution of the conservative square-root noise, d = 1.

    dW holds one N(0, dt) increment per node.  With the centered first
    difference the output is

        out(x) = N^(-1/2) h^(-1/2) [sqrt(rho^+)(x+h) dW(x+h)
                                    - sqrt(rho^+)(x-h) dW(x-h)] / (2h),

    a discrete divergence, so sum_x h * out(x) = 0 exactly.
    """
    g = rho_for_amplitude.grid
    if g.d != 1:
        raise GridError("Dean-Kawasaki dynamics are implemented for d=1")
    if dW.grid != g:
        raise GridError("increment grid mismatch")
    out = _assemble_noise_values(rho_for_amplitude.values, dW.values, g.h, N)
    return GridFunction(g, out)


def _assemble_noise_values(
    rho_values: np.ndarray, dW: np.ndarray, h: float, N: int
) -> np.ndarray:
    """Array core of assemble_noise; last axis is the spatial axis."""
    flux = noise_amplitude(rho_values) * dW
    coef = 1.0 / (np.sqrt(N) * np.sqrt(h) * 2.0 * h)
    return coef * (np.roll(flux, -1, axis=-1) - np.roll(flux, 1, axis=-1))


@dataclass
class DkState:
    """One realization's state between steps."""

    rho: GridFunction
    rho_prev: GridFunction | None
    noise_prev: GridFunction | None
    clock: float
    step_index: int
    N: int
    generator: np.random.Generator | None = None
    rho0: GridFunction | None = None  # initial density; linearised amplitude source

    @classmethod
    def from_placement(
        cls, placement: InitialPlacement, cfg: SchemeConfig, realization: int = 0
    ) -> "DkState":
        tag = rng.DK_LIN_NOISE if cfg.model == "linearised" else rng.DK_NOISE
        gen = rng.stream(cfg.noise_seed, realization, tag)
        rho0 = placement.matched_density
        return cls(rho0, None, None, 0.0, 0, placement.N, gen, rho0)


class _Spectral:
    """Real-FFT solve factors for the implicit steps on one grid."""

    def __init__(self, grid: Grid, cfg: SchemeConfig):
        if grid.d != 1:
            raise GridError("Dean-Kawasaki dynamics are implemented for d=1")
        self.grid = grid
        h = grid.h
        xi = np.arange(grid.L // 2 + 1)
        self.lam = (2.0 - 2.0 * np.cos(h * xi)) / (h * h)  # -Lap_h eigenvalues
        self.dt = cfg.dt
        self.euler_rhs = 1.0 - 0.25 * cfg.dt * self.lam
        self.euler_solve = 1.0 / (1.0 + 0.25 * cfg.dt * self.lam)
        self.bdf2_solve = 1.0 / (1.0 + cfg.bdf2_drift_coefficient * cfg.dt * self.lam)
        self.heat_kernel_dt = np.exp(-0.5 * cfg.dt * self.lam)

    def solve(self, rhs: np.ndarray, factors: np.ndarray) -> np.ndarray:
        return np.fft.irfft(np.fft.rfft(rhs, axis=-1) * factors, axis=-1)


def _draw_increment(state: DkState, cfg: SchemeConfig) -> GridFunction:
    g = state.rho.grid
    if cfg.model == "deterministic":
        return GridFunction.constant(g, 0.0)
    vals = np.sqrt(cfg.dt) * state.generator.standard_normal(g.L)
    return GridFunction(g, vals)


def _amplitude_source(state: DkState, cfg: SchemeConfig) -> GridFunction:
    if cfg.model == "linearised":
        from .heat import discrete_forward_flow

        if state.rho0 is None:
            raise ConfigError("linearised stepping requires the initial density")
        # Mean-field density at the current step time.
        return discrete_forward_flow(state.rho0, state.clock)
    return state.rho


def first_step(state: DkState, cfg: SchemeConfig) -> DkState:
    """Mixed implicit-explicit Euler step with explicit noise (step 0 only)."""
    if state.step_index != 0:
        raise ConfigError("first_step applies only at step_index 0")
    g = state.rho.grid
    spectral = _Spectral(g, cfg)
    dW = _draw_increment(state, cfg)
    amp = _amplitude_source(state, cfg)
    noise = assemble_noise(amp, state.N, dW)
    rhs = (
        state.rho.values
        + 0.25 * cfg.dt * laplacian_values(state.rho.values, g.h, 1)
        + noise.values
    )
    new = spectral.solve(rhs, spectral.euler_solve)
    return DkState(
        GridFunction(g, new),
        state.rho,
        noise,
        state.clock + cfg.dt,
        1,
        state.N,
        state.generator,
        state.rho0,
    )


def bdf2_step(state: DkState, cfg: SchemeConfig) -> DkState:
    """Two-step BDF2 update; requires a populated previous state and noise."""
    if state.step_index < 1 or state.rho_prev is None or state.noise_prev is None:
        raise ConfigError("bdf2_step requires first_step to have run")
    g = state.rho.grid
    spectral = _Spectral(g, cfg)
    dW = _draw_increment(state, cfg)
    amp = _amplitude_source(state, cfg)
    noise = assemble_noise(amp, state.N, dW)
    rhs = (
        (4.0 / 3.0) * state.rho.values
        - (1.0 / 3.0) * state.rho_prev.values
        - (1.0 / 3.0) * state.noise_prev.values
        + noise.values
    )
    new = spectral.solve(rhs, spectral.bdf2_solve)
    return DkState(
        GridFunction(g, new),
        state.rho,
        noise,
        state.clock + cfg.dt,
        state.step_index + 1,
        state.N,
        state.generator,
        state.rho0,
    )


@dataclass
class TrajectoryMonitor:
    """Per-realization trajectory diagnostics."""

    sup_neg_norm: float
    min_density: float
    mass_drift: float


def steps_for_time(t: float, dt: float) -> int:
    """Map a record time onto the step lattice, rejecting off-lattice times."""
    n = int(round(t / dt))
    if n < 0 or abs(n * dt - t) > 1e-12:
        raise ConfigError(f"record time {t} is not a multiple of dt={dt}")
    return n


class TrajectoryEngine:
    """Vectorized trajectory runner: many independent realizations at once.

    Realization r draws its entire increment block as one
    standard_normal((n_steps, L)) call from stream (seed, r, tag), so
    results are independent of batching and worker scheduling.  The state
    marches in Fourier space (the implicit solves are diagonal there);
    real-space densities are materialized per step only when the noise
    amplitude or the monitors need them.
    """

    def __init__(
        self,
        placement: InitialPlacement,
        cfg: SchemeConfig,
        record_times: Sequence[float],
        monitor: bool = True,
    ):
        self.placement = placement
        self.cfg = cfg
        self.monitor = monitor
        self.grid = placement.grid
        self.spectral = _Spectral(self.grid, cfg)
        self.record_times = list(record_times)
        self.record_steps = [steps_for_time(t, cfg.dt) for t in self.record_times]
        if sorted(self.record_steps) != self.record_steps:
            raise ConfigError("record times must be sorted nondecreasing")
        self.n_steps = self.record_steps[-1] if self.record_steps else 0
        self.rho0 = placement.matched_density.values
        self._amp_bar = None
        if cfg.model == "linearised":
            self._amp_bar = self._mean_field_amplitudes()

    def _mean_field_amplitudes(self) -> np.ndarray:
        """sqrt(mean-field density) at every step time, computed spectrally."""
        table = np.empty((max(self.n_steps, 1), self.grid.L))
        spec = np.fft.rfft(self.rho0)
        for m in range(table.shape[0]):
            table[m] = noise_amplitude(np.fft.irfft(spec, n=self.grid.L))
            spec = spec * self.spectral.heat_kernel_dt
        return table

    def increments(self, realization: int) -> np.ndarray | None:
        """The realization's full N(0, dt) increment block, step-major."""
        if self.cfg.model == "deterministic":
            return None
        tag = rng.DK_LIN_NOISE if self.cfg.model == "linearised" else rng.DK_NOISE
        gen = rng.stream(self.cfg.noise_seed, realization, tag)
        return np.sqrt(self.cfg.dt) * gen.standard_normal((self.n_steps, self.grid.L))

    def run_batch(self, realizations: Sequence[int]):
        """Run a batch of realizations; returns (snapshots, monitors).

        snapshots has shape (n_record_times, batch, L); monitors is a list
        of TrajectoryMonitor (None entries when monitoring is off).
        """
        B = len(realizations)
        L = self.grid.L
        h = self.grid.h
        cfg = self.cfg
        noisy = cfg.model != "deterministic"
        nonlinear = cfg.model == "nonlinear"
        track = self.monitor

        # Raw N(0,1) draws, one contiguous (n_steps, L) block per
        # realization; the sqrt(dt) scale is folded into the divergence
        # multiplier below.  Layout matches increments().
        dZ = None
        if noisy and self.n_steps:
            tag = rng.DK_LIN_NOISE if cfg.model == "linearised" else rng.DK_NOISE
            dZ = np.empty((B, self.n_steps, L))
            for b, r in enumerate(realizations):
                gen = rng.stream(cfg.noise_seed, r, tag)
                gen.standard_normal(out=dZ[b])

        rho = np.tile(self.rho0, (B, 1))
        rho_hat = np.fft.rfft(rho, axis=-1)
        rho_prev_hat = None
        noise_prev_hat = None

        if track:
            mass0 = rho_hat[:, 0].real * h
            sup_neg2 = np.zeros(B)
            min_density = rho.min(axis=-1)
            max_mass_dev = np.zeros(B)

        snapshots = np.empty((len(self.record_steps), B, L))
        rec: dict[int, list[int]] = {}
        for i, s in enumerate(self.record_steps):
            rec.setdefault(s, []).append(i)
        for i in rec.get(0, []):
            snapshots[i] = rho

        # Spectral divergence of the noise flux: the centered difference
        # (flux(x+h) - flux(x-h)) / (2h) is the multiplier i sin(h xi) / h.
        # The increments' sqrt(dt) scale rides along in the multiplier.
        xi = np.arange(L // 2 + 1)
        div_mult = (1j * np.sin(h * xi) / h) / (
            np.sqrt(self.placement.N) * np.sqrt(h)
        ) * np.sqrt(cfg.dt)

        need_real = nonlinear or track
        for m in range(self.n_steps):
            if noisy:
                amp = noise_amplitude(rho) if nonlinear else self._amp_bar[m]
                flux = amp * dZ[:, m, :]
                noise_hat = div_mult * np.fft.rfft(flux, axis=-1)
            else:
                noise_hat = None

            if m == 0:
                new_hat = rho_hat * self.spectral.euler_rhs
                if noisy:
                    new_hat += noise_hat
                new_hat *= self.spectral.euler_solve
            else:
                new_hat = (4.0 / 3.0) * rho_hat - (1.0 / 3.0) * rho_prev_hat
                if noisy:
                    new_hat += noise_hat - (1.0 / 3.0) * noise_prev_hat
                new_hat *= self.spectral.bdf2_solve

            rho_prev_hat = rho_hat
            rho_hat = new_hat
            noise_prev_hat = noise_hat

            recording = rec.get(m + 1, [])
            if need_real or recording:
                rho = np.fft.irfft(rho_hat, n=L, axis=-1)
            if track:
                row_min = rho.min(axis=-1)
                np.minimum(min_density, row_min, out=min_density)
                if row_min.min() < 0 or np.isnan(row_min.min()):
                    neg = np.minimum(rho, 0.0)
                    sup_neg2 = np.maximum(sup_neg2, (neg * neg).sum(axis=-1) * h)
                np.maximum(
                    max_mass_dev,
                    np.abs(rho_hat[:, 0].real * h - mass0),
                    out=max_mass_dev,
                )
            for i in recording:
                snapshots[i] = rho

        if snapshots.size and np.isnan(snapshots).any():
            bad = sorted(
                {
                    realizations[b]
                    for b in np.nonzero(np.isnan(snapshots).any(axis=(0, 2)))[0]
                }
            )
            raise NumericalError(f"NaN detected in trajectories, realizations {bad}")

        if not track:
            return snapshots, [None] * B
        if np.isnan(min_density).any():
            bad = [realizations[b] for b in np.nonzero(np.isnan(min_density))[0]]
            raise NumericalError(f"NaN detected in trajectories, realizations {bad}")
        monitors = [
            TrajectoryMonitor(
                float(np.sqrt(sup_neg2[b])),
                float(min_density[b]),
                float(max_mass_dev[b] / np.abs(mass0[b])),
            )
            for b in range(B)
        ]
        return snapshots, monitors


def run_trajectory(
    placement: InitialPlacement,
    cfg: SchemeConfig,
    record_times: Sequence[float],
    realization: int = 0,
):
    """Run one realization; returns ([(time, GridFunction), ...], monitor)."""
    engine = TrajectoryEngine(placement, cfg, record_times)
    snapshots, monitors = engine.run_batch([realization])
    g = placement.grid
    out = [
        (t, GridFunction(g, snapshots[i, 0].copy()))
        for i, t in enumerate(engine.record_times)
    ]
    return out, monitors[0]


def expected_dk(placement: InitialPlacement, t: float) -> GridFunction:
    """Expected density of the semi-discrete model: the discrete heat flow."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    from .heat import discrete_forward_flow

    return discrete_forward_flow(placement.matched_density, t)


def deterministic_trajectory(
    placement: InitialPlacement, cfg: SchemeConfig, record_times: Sequence[float]
) -> list[GridFunction]:
    """Noise-off run of the same integrator.

    This is the exact expectation of the time-discretised dynamics (the
    noise has zero conditional mean), so it serves as the centering
    reference for moment estimation; it differs from expected_dk by the
    O(dt^2) time-discretisation error.
    """
    det_cfg = SchemeConfig(
        dt=cfg.dt,
        model="deterministic",
        noise_seed=cfg.noise_seed,
        paper_literal_bdf2=cfg.paper_literal_bdf2,
    )
    snaps, _ = run_trajectory(placement, det_cfg, record_times)
    return [gf for _, gf in snaps]


@dataclass
class NegativePartReport:
    """Aggregate negativity diagnostics over a batch of realizations."""

    realizations: int
    mean_sup_neg: float
    max_sup_neg: float
    fraction_negative: float
    envelope: float
    in_scaling_regime: bool
    N: int
    h: float
    stderr_sup_neg: float = 0.0


def negative_part_report(
    monitors: Sequence[TrajectoryMonitor],
    N: int,
    h: float,
    rho_min: float,
    rho_max: float,
    d: int = 1,
) -> NegativePartReport:
    """Summarize sup-in-time negative-part norms across realizations.

    The envelope is the shape exp(-rho_min sqrt(N h^d) / sqrt(rho_max))
    for qualitative comparison only; its prefactor constants are unknown.
    The scaling flag records h >= N^(-1/d).
    """
    if not monitors:
        raise ValueError("need at least one monitored realization")
    sup = np.array([m.sup_neg_norm for m in monitors])
    stderr = float(sup.std(ddof=1) / np.sqrt(len(monitors))) if len(monitors) > 1 else 0.0
    return NegativePartReport(
        realizations=len(monitors),
        mean_sup_neg=float(sup.mean()),
        max_sup_neg=float(sup.max()),
        fraction_negative=float(np.mean(sup > 0)),
        envelope=float(np.exp(-rho_min * np.sqrt(N * h**d) / np.sqrt(rho_max))),
        in_scaling_regime=bool(h >= N ** (-1.0 / d)),
        N=N,
        h=h,
        stderr_sup_neg=stderr,
    )
