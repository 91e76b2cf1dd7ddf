"""Seeded, parallel Monte Carlo estimation of centered product moments.

A moment is specified by entries (T_m, j_m, phi_m): the statistic of one
realization is the product over m of (A_m - E_m)^(j_m), where A_m is the
pairing of the simulated density with phi_m at time T_m and E_m is the
EXACT expectation of A_m -- never a sample mean.  For the particle model
the exact expectation comes from the heat semigroup; for the
Dean-Kawasaki models it is the noise-off run of the same integrator
(the noise has zero conditional mean, so that run is the exact mean of
the time-discretised dynamics).

Realizations are independent across a counter-based stream keyed by
(seed, realization, subsystem); estimates are reduced through mergeable
running-moment accumulators in a fixed chunk order, so results are
bit-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import rng
from .dynamics import SchemeConfig, TrajectoryEngine, steps_for_time
from .grid import GridFunction, interpolate, apply_gradient, CENTERED_FIRST
from .heat import TestFunction, fast_pointwise
from .particles import InitialPlacement, expected_pairing

MODELS = ("particles", "dk", "dk-linearised", "dk-deterministic")

_SCHEME_MODEL = {
    "dk": "nonlinear",
    "dk-linearised": "linearised",
    "dk-deterministic": "deterministic",
}

# Fixed partitioning constants.  Results must not depend on worker count,
# so chunk and batch boundaries are functions of these constants only.
CHUNK = 4096
_DK_BATCH_BUDGET = 1 << 24  # doubles held by one increment block
_PARTICLE_BATCH_BUDGET = 1 << 21  # positions held by one batch


@dataclass(frozen=True)
class MomentEntry:
    time: float
    exponent: int
    phi: TestFunction

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("observation times must be nonnegative")
        if self.exponent < 1:
            raise ValueError("exponents must be positive integers")


@dataclass(frozen=True)
class MomentSpec:
    """A centered product moment: times, positive exponents, test functions."""

    entries: tuple[MomentEntry, ...]
    tag: str = ""

    def __post_init__(self):
        times = [e.time for e in self.entries]
        if times != sorted(times):
            raise ValueError("entries must be sorted by nondecreasing time")
        if not self.entries:
            raise ValueError("a moment needs at least one entry")

    @classmethod
    def build(cls, entries: Sequence[tuple[float, int, TestFunction]], tag: str = ""):
        made = tuple(MomentEntry(t, j, phi) for (t, j, phi) in entries if j != 0)
        return cls(tuple(sorted(made, key=lambda e: e.time)), tag)

    @property
    def total_order(self) -> int:
        return sum(e.exponent for e in self.entries)

    def signature(self) -> tuple:
        return tuple((e.time, e.exponent, e.phi.name) for e in self.entries)


@dataclass
class MomentEstimate:
    mean: float
    stderr: float
    M: int
    model: str
    spec: MomentSpec


@dataclass
class RunningMoments:
    """Mergeable streaming mean/variance accumulator (Chan et al. update)."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add_batch(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        b = values.size
        if b == 0:
            return
        bm = float(values.mean())
        bm2 = float(((values - bm) ** 2).sum())
        self.merge(RunningMoments(b, bm, bm2))

    def merge(self, other: "RunningMoments") -> None:
        if other.n == 0:
            return
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean, other.m2
            return
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean += delta * other.n / n
        self.m2 += other.m2 + delta * delta * self.n * other.n / n
        self.n = n

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else float("nan")

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.n)


@dataclass
class _Plan:
    """Everything a worker needs; all fields picklable."""

    placement: InitialPlacement
    scheme: SchemeConfig
    model: str
    seed: int
    times: tuple[float, ...]  # unique observation times, ascending
    phis: tuple[TestFunction, ...]  # one per observable
    obs_time_index: tuple[int, ...]  # observable -> index into times
    exponents: tuple[tuple[int, ...], ...]  # spec -> exponent per observable
    centers: tuple[float, ...]  # exact E_m per observable


def _dk_batch_size(n_steps: int, L: int) -> int:
    return max(1, min(512, _DK_BATCH_BUDGET // max(1, n_steps * L)))


def _particle_batch_size(N: int) -> int:
    return max(1, min(256, _PARTICLE_BATCH_BUDGET // max(1, N)))


def _statistics(plan: _Plan, deltas: np.ndarray) -> list[np.ndarray]:
    """Per-spec product statistics for a batch of centered pairings."""
    out = []
    for exps in plan.exponents:
        w = np.ones(deltas.shape[0])
        for i, j in enumerate(exps):
            if j == 1:
                w = w * deltas[:, i]
            elif j > 1:
                w = w * deltas[:, i] ** j
        out.append(w)
    return out


def _run_chunk_dk(plan: _Plan, start: int, stop: int) -> list[RunningMoments]:
    cfg = replace(
        plan.scheme, model=_SCHEME_MODEL[plan.model], noise_seed=plan.seed
    )
    engine = TrajectoryEngine(plan.placement, cfg, list(plan.times), monitor=False)
    g = plan.placement.grid
    phiv = np.stack([interpolate(p.eval, g).values for p in plan.phis])
    centers = np.asarray(plan.centers)
    accs = [RunningMoments() for _ in plan.exponents]
    B = _dk_batch_size(engine.n_steps, g.L)
    for lo in range(start, stop, B):
        batch = range(lo, min(lo + B, stop))
        snaps, _ = engine.run_batch(batch)
        # snaps: (n_times, B, L); pair each observable against its own time.
        A = np.empty((len(batch), len(plan.phis)))
        for o, (ti, pv) in enumerate(zip(plan.obs_time_index, phiv)):
            A[:, o] = g.h * (snaps[ti] @ pv)
        deltas = A - centers[None, :]
        for acc, w in zip(accs, _statistics(plan, deltas)):
            acc.add_batch(w)
    return accs


def _run_chunk_particles(plan: _Plan, start: int, stop: int) -> list[RunningMoments]:
    placement = plan.placement
    N = placement.N
    x0 = placement.initial_positions()
    evaluators = [fast_pointwise(p) for p in plan.phis]
    centers = np.asarray(plan.centers)
    accs = [RunningMoments() for _ in plan.exponents]
    obs_at_time = {}
    for o, ti in enumerate(plan.obs_time_index):
        obs_at_time.setdefault(ti, []).append(o)

    B = _particle_batch_size(N)
    for lo in range(start, stop, B):
        batch = list(range(lo, min(lo + B, stop)))
        gens = [rng.stream(plan.seed, r, rng.PARTICLES) for r in batch]
        positions = np.tile(x0, (len(batch), 1))
        A = np.empty((len(batch), len(plan.phis)))
        clock = 0.0
        for ti, t in enumerate(plan.times):
            dt = t - clock
            if dt > 0:
                sd = math.sqrt(dt)
                for b, gen in enumerate(gens):
                    positions[b] += sd * gen.standard_normal(N)
                positions = np.mod(positions + np.pi, 2.0 * np.pi) - np.pi
                clock = t
            for o in obs_at_time.get(ti, []):
                vals = evaluators[o](positions.ravel())
                A[:, o] = vals.reshape(len(batch), N).mean(axis=1)
        deltas = A - centers[None, :]
        for acc, w in zip(accs, _statistics(plan, deltas)):
            acc.add_batch(w)
    return accs


def _run_chunk(args) -> list[RunningMoments]:
    plan, start, stop = args
    if plan.model == "particles":
        return _run_chunk_particles(plan, start, stop)
    return _run_chunk_dk(plan, start, stop)


class MomentLab:
    """Moment estimation bound to one placement and scheme configuration.

    centering selects the exact expectation used for the Dean-Kawasaki
    models: 'scheme' (noise-off run of the same integrator; the exact
    mean of the discrete-time dynamics) or 'spectral' (the semi-discrete
    heat flow; differs by the O(dt^2) time-discretisation error).
    """

    def __init__(
        self,
        placement: InitialPlacement,
        scheme: SchemeConfig | None = None,
        workers: int = 1,
        centering: str = "scheme",
    ):
        if centering not in ("scheme", "spectral"):
            raise ValueError("centering must be 'scheme' or 'spectral'")
        self.placement = placement
        self.scheme = scheme if scheme is not None else SchemeConfig()
        self.workers = max(1, workers)
        self.centering = centering

    # -- planning ---------------------------------------------------------

    def _plan(self, specs: Sequence[MomentSpec], model: str, seed: int) -> _Plan:
        if model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {model!r}")
        observables: list[tuple[float, TestFunction]] = []
        keys: dict[tuple[float, int], int] = {}
        exponents = []
        for spec in specs:
            row = {}
            for e in spec.entries:
                key = (e.time, id(e.phi))
                if key not in keys:
                    keys[key] = len(observables)
                    observables.append((e.time, e.phi))
                row[keys[key]] = e.exponent
            exponents.append(row)
        times = sorted({t for t, _ in observables})
        order = sorted(range(len(observables)), key=lambda o: observables[o][0])
        observables = [observables[o] for o in order]
        exp_matrix = tuple(
            tuple(row.get(old, 0) for old in order) for row in exponents
        )
        obs_time_index = tuple(times.index(t) for t, _ in observables)
        phis = tuple(p for _, p in observables)
        centers = self._centers(model, times, observables)
        return _Plan(
            placement=self.placement,
            scheme=self.scheme,
            model=model,
            seed=seed,
            times=tuple(times),
            phis=phis,
            obs_time_index=obs_time_index,
            exponents=exp_matrix,
            centers=tuple(centers),
        )

    def _centers(self, model, times, observables) -> list[float]:
        g = self.placement.grid
        if model == "particles":
            return [
                expected_pairing(self.placement, phi, t) for t, phi in observables
            ]
        if self.centering == "spectral":
            from .dynamics import expected_dk

            means = {t: expected_dk(self.placement, t) for t in times}
        else:
            from .dynamics import deterministic_trajectory

            dets = deterministic_trajectory(self.placement, self.scheme, list(times))
            means = dict(zip(times, dets))
        out = []
        for t, phi in observables:
            node_vals = interpolate(phi.eval, g)
            out.append(g.h**g.d * float(np.dot(means[t].values, node_vals.values)))
        return out

    # -- estimation ---------------------------------------------------------

    def estimate_moments(
        self, specs: Sequence[MomentSpec], model: str, M: int, seed: int
    ) -> list[MomentEstimate]:
        """Estimate several moments from one shared set of trajectories."""
        if M < 2:
            raise ValueError("need at least two realizations for a standard error")
        plan = self._plan(specs, model, seed)
        chunks = [(plan, lo, min(lo + CHUNK, M)) for lo in range(0, M, CHUNK)]
        if self.workers == 1 or len(chunks) == 1:
            results = [_run_chunk(c) for c in chunks]
        else:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(_run_chunk, chunks))
        totals = [RunningMoments() for _ in specs]
        for chunk_accs in results:  # fixed chunk order: deterministic reduce
            for tot, acc in zip(totals, chunk_accs):
                tot.merge(acc)
        return [
            MomentEstimate(acc.mean, acc.stderr, acc.n, model, spec)
            for acc, spec in zip(totals, specs)
        ]

    def estimate_moment(
        self, spec: MomentSpec, model: str, M: int, seed: int
    ) -> MomentEstimate:
        return self.estimate_moments([spec], model, M, seed)[0]


@dataclass
class MomentDifference:
    diff: float
    combined_stderr: float
    significant: bool


def moment_difference(a: MomentEstimate, b: MomentEstimate) -> MomentDifference:
    """|mean_a - mean_b| with combined standard error and a 3-sigma flag."""
    if a.spec.signature() != b.spec.signature():
        raise ValueError("moment estimates target different specifications")
    diff = abs(a.mean - b.mean)
    se = math.sqrt(a.stderr**2 + b.stderr**2)
    return MomentDifference(diff, se, diff > 3.0 * se)


def _composite_simpson(y: np.ndarray, dx: float) -> float:
    """Composite Simpson on a uniform lattice; 3/8 correction for odd counts."""
    n = y.size - 1
    if n == 0:
        return 0.0
    if n == 1:
        return float(0.5 * dx * (y[0] + y[1]))
    total = 0.0
    if n % 2 == 1:
        # close the last three intervals with the 3/8 rule
        total += 3.0 * dx / 8.0 * (y[-4] + 3 * y[-3] + 3 * y[-2] + y[-1])
        y = y[: n - 2]
        n -= 3
        if n == 0:
            return float(total)
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float(total + dx / 3.0 * np.dot(w, y[: n + 1]))


def dk_second_moment_oracle(
    placement: InitialPlacement,
    phi: TestFunction,
    T: float,
    dt: float = 0.001,
) -> float:
    """Exact-in-h second moment of the centered pairing for the semi-discrete model.

    Computes N^{-1} int_0^T (rhobar_h(t), |grad_h phi_h^t|^2)_h dt by
    composite Simpson on the dt lattice, with the backward flow phi_h^t
    and the mean-field trajectory both evaluated spectrally (exact).
    """
    if T < 0:
        raise ValueError("time must be nonnegative")
    g = placement.grid
    n = steps_for_time(T, dt)
    if n == 0:
        return 0.0
    L = g.L
    xi = np.arange(L // 2 + 1)
    lam = (2.0 - 2.0 * np.cos(g.h * xi)) / (g.h * g.h)

    phi_spec = np.fft.rfft(interpolate(phi.eval, g).values)
    rho_spec = np.fft.rfft(placement.matched_density.values)

    # Damping factors are evaluated per step (not marched) so that modes
    # that underflow near t = 0 recover exactly as t -> T.
    integrand = np.empty(n + 1)
    for m in range(n + 1):
        t = m * dt
        phi_t = np.fft.irfft(phi_spec * np.exp(-0.5 * lam * (T - t)), n=L)
        rho_t = np.fft.irfft(rho_spec * np.exp(-0.5 * lam * t), n=L)
        grad = apply_gradient(CENTERED_FIRST, GridFunction(g, phi_t))[0].values
        integrand[m] = g.h * float(np.dot(rho_t, grad * grad))
    return _composite_simpson(integrand, dt) / placement.N
