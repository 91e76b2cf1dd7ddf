"""The stochastic integrator: noise assembly, stepping, monitors."""

import numpy as np
import pytest

from dksim.grid import (
    CENTERED_FIRST,
    Grid,
    GridFunction,
    apply_gradient,
    inner_product,
    interpolate,
    norm_h,
)
from dksim.heat import TestFunction, discrete_forward_flow
from dksim.dynamics import (
    ConfigError,
    DkState,
    NumericalError,
    SchemeConfig,
    TrajectoryEngine,
    assemble_noise,
    bdf2_step,
    deterministic_trajectory,
    expected_dk,
    first_step,
    negative_part_report,
    noise_amplitude,
    run_trajectory,
    steps_for_time,
)
from dksim.particles import InitialPlacement, expected_pairing, place_particles
from dksim.presets import bump6


@pytest.fixture(scope="module")
def rho_bump():
    return TestFunction.from_callable(bump6, K=256, name="bump6")


@pytest.fixture(scope="module")
def placement64(rho_bump):
    return place_particles(rho_bump, Grid(1, 64), 8211)


class TestSchemeConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            SchemeConfig(dt=0.0)
        with pytest.raises(ConfigError):
            SchemeConfig(model="implicit")

    def test_bdf2_coefficient_switch(self):
        assert SchemeConfig().bdf2_drift_coefficient == pytest.approx(1 / 3)
        assert SchemeConfig(paper_literal_bdf2=True).bdf2_drift_coefficient == (
            pytest.approx(2 / 3)
        )

    def test_record_time_lattice(self):
        assert steps_for_time(0.4, 0.001) == 400
        with pytest.raises(ConfigError):
            steps_for_time(0.4005, 0.001)


class TestAssembleNoise:
    def test_nonpositive_density_silences_noise(self):
        g = Grid(1, 16)
        rho = GridFunction.constant(g, -1.0)
        dW = GridFunction(g, np.random.default_rng(0).standard_normal(16))
        out = assemble_noise(rho, 100, dW)
        assert np.all(out.values == 0.0)

    def test_zero_increments(self):
        g = Grid(1, 16)
        rho = GridFunction.constant(g, 2.0)
        out = assemble_noise(rho, 100, GridFunction.constant(g, 0.0))
        assert np.all(out.values == 0.0)

    def test_divergence_form_sums_to_zero(self):
        g = Grid(1, 32)
        rng = np.random.default_rng(1)
        rho = GridFunction(g, 1.0 + np.abs(rng.standard_normal(32)))
        dW = GridFunction(g, rng.standard_normal(32))
        out = assemble_noise(rho, 500, dW)
        assert abs(out.values.sum()) < 1e-12 * np.abs(out.values).max()

    def test_nodal_formula_direct(self):
        # out(x) = [F(x+h) dW(x+h) - F(x-h) dW(x-h)] / (2h sqrt(N h))
        g = Grid(1, 8)
        rng = np.random.default_rng(2)
        rho = GridFunction(g, 1.0 + np.abs(rng.standard_normal(8)))
        dW = GridFunction(g, rng.standard_normal(8))
        N = 321
        out = assemble_noise(rho, N, dW)
        F = np.sqrt(np.maximum(rho.values, 0.0))
        for j in range(8):
            expect = (
                F[(j + 1) % 8] * dW.values[(j + 1) % 8]
                - F[(j - 1) % 8] * dW.values[(j - 1) % 8]
            ) / (2 * g.h * np.sqrt(N * g.h))
            assert out.values[j] == pytest.approx(expect, rel=1e-13)

    def test_quadratic_covariation(self, placement64):
        # sample covariance of pairings matches N^-1 dt (rho+, grad phi1 . grad phi2)_h
        g = placement64.grid
        rho = placement64.matched_density
        N, dt, M = placement64.N, 1e-3, 30_000
        rng = np.random.default_rng(7)
        phi1 = interpolate(lambda x: np.cos(x) + 0.2 * np.sin(3 * x), g)
        phi2 = interpolate(lambda x: np.sin(2 * x) - 0.1 * np.cos(x), g)
        from dksim.dynamics import _assemble_noise_values

        dW = np.sqrt(dt) * rng.standard_normal((M, g.L))
        noise = _assemble_noise_values(rho.values, dW, g.h, N)
        p1 = g.h * (noise @ phi1.values)
        p2 = g.h * (noise @ phi2.values)
        prods = p1 * p2
        se = prods.std(ddof=1) / np.sqrt(M)
        g1 = apply_gradient(CENTERED_FIRST, phi1)[0].values
        g2 = apply_gradient(CENTERED_FIRST, phi2)[0].values
        theory = dt / N * g.h * np.sum(np.maximum(rho.values, 0.0) * g1 * g2)
        assert abs(prods.mean() - theory) < 4 * se


class TestFirstStep:
    def test_constant_fixed_point_deterministic(self):
        g = Grid(1, 16)
        cfg = SchemeConfig(dt=1e-3, model="deterministic")
        st = DkState(GridFunction.constant(g, 2.5), None, None, 0.0, 0, 100)
        out = first_step(st, cfg)
        assert np.allclose(out.rho.values, 2.5)
        assert out.step_index == 1 and out.clock == pytest.approx(1e-3)

    def test_eigenmode_update_and_dense_solve(self):
        g = Grid(1, 16)
        cfg = SchemeConfig(dt=1e-3, model="deterministic")
        rho0 = interpolate(np.cos, g)
        st = DkState(rho0, None, None, 0.0, 0, 100)
        out = first_step(st, cfg)
        lam = (2 - 2 * np.cos(g.h)) / g.h**2
        expect = rho0.values * (1 - 0.25 * cfg.dt * lam) / (1 + 0.25 * cfg.dt * lam)
        assert np.allclose(out.rho.values, expect, atol=1e-14)
        # dense linear-algebra oracle: (I - dt/4 Lap) rho1 = (I + dt/4 Lap) rho0
        L = g.L
        lap = np.zeros((L, L))
        for j in range(L):
            lap[j, j] = -2 / g.h**2
            lap[j, (j + 1) % L] = 1 / g.h**2
            lap[j, (j - 1) % L] = 1 / g.h**2
        lhs = np.eye(L) - 0.25 * cfg.dt * lap
        rhs = (np.eye(L) + 0.25 * cfg.dt * lap) @ rho0.values
        dense = np.linalg.solve(lhs, rhs)
        assert np.allclose(out.rho.values, dense, atol=1e-12)

    def test_requires_step_zero(self):
        g = Grid(1, 16)
        cfg = SchemeConfig(dt=1e-3)
        st = DkState(GridFunction.constant(g, 1.0), None, None, 0.0, 3, 100)
        with pytest.raises(ConfigError):
            first_step(st, cfg)

    def test_mass_conserved_with_noise(self, placement64):
        cfg = SchemeConfig(dt=1e-3, model="nonlinear", noise_seed=4)
        st = DkState.from_placement(placement64, cfg)
        one = GridFunction.constant(placement64.grid, 1.0)
        m0 = inner_product(st.rho, one)
        out = first_step(st, cfg)
        assert inner_product(out.rho, one) == pytest.approx(m0, rel=1e-12)


class TestBdf2Step:
    def test_requires_history(self):
        g = Grid(1, 16)
        cfg = SchemeConfig(dt=1e-3)
        st = DkState(GridFunction.constant(g, 1.0), None, None, 0.0, 0, 100)
        with pytest.raises(ConfigError):
            bdf2_step(st, cfg)

    def test_constant_forever_deterministic(self):
        g = Grid(1, 16)
        cfg = SchemeConfig(dt=1e-3, model="deterministic")
        st = DkState(GridFunction.constant(g, 2.5), None, None, 0.0, 0, 100)
        st = first_step(st, cfg)
        for _ in range(5):
            st = bdf2_step(st, cfg)
        assert np.allclose(st.rho.values, 2.5, atol=1e-13)

    def test_mass_conserved_long_noisy_run(self, placement64):
        cfg = SchemeConfig(dt=1e-3, model="nonlinear", noise_seed=12)
        _, monitor = run_trajectory(placement64, cfg, [0.4], realization=0)
        assert monitor.mass_drift < 1e-10

    def test_temporal_order_two(self, placement64):
        errs = []
        for dt in (4e-3, 2e-3, 1e-3):
            cfg = SchemeConfig(dt=dt, model="deterministic")
            snaps, _ = run_trajectory(placement64, cfg, [0.4])
            exact = discrete_forward_flow(placement64.matched_density, 0.4)
            errs.append(norm_h(GridFunction(placement64.grid, snaps[0][1].values - exact.values)))
        slope = np.polyfit(np.log([4e-3, 2e-3, 1e-3]), np.log(errs), 1)[0]
        assert 1.8 <= slope <= 2.2


class TestTrajectories:
    def test_record_time_zero_returns_initial(self, placement64):
        cfg = SchemeConfig(dt=1e-3, model="nonlinear", noise_seed=1)
        snaps, monitor = run_trajectory(placement64, cfg, [0.0])
        assert np.array_equal(snaps[0][1].values, placement64.matched_density.values)
        assert monitor.sup_neg_norm == 0.0

    def test_off_lattice_time_rejected(self, placement64):
        cfg = SchemeConfig(dt=1e-3)
        with pytest.raises(ConfigError):
            run_trajectory(placement64, cfg, [0.40004])

    def test_unsorted_times_rejected(self, placement64):
        cfg = SchemeConfig(dt=1e-3)
        with pytest.raises(ConfigError):
            TrajectoryEngine(placement64, cfg, [0.4, 0.32])

    def test_engine_matches_public_steps(self, placement64):
        cfg = SchemeConfig(dt=1e-3, model="nonlinear", noise_seed=5)
        engine = TrajectoryEngine(placement64, cfg, [0.05], monitor=False)
        snaps, _ = engine.run_batch([7])
        st = DkState.from_placement(placement64, cfg, realization=7)
        st = first_step(st, cfg)
        for _ in range(49):
            st = bdf2_step(st, cfg)
        assert np.abs(snaps[0, 0] - st.rho.values).max() < 1e-12

    def test_batching_invariance(self, placement64):
        cfg = SchemeConfig(dt=1e-3, model="nonlinear", noise_seed=9)
        engine = TrajectoryEngine(placement64, cfg, [0.02])
        alone, _ = engine.run_batch([3])
        grouped, _ = engine.run_batch([0, 1, 2, 3, 4])
        assert np.array_equal(alone[0, 0], grouped[0, 3])

    def test_deterministic_matches_spectral_flow_to_dt2(self, placement64):
        cfg = SchemeConfig(dt=1e-3, model="deterministic")
        snaps, _ = run_trajectory(placement64, cfg, [0.4])
        exact = discrete_forward_flow(placement64.matched_density, 0.4)
        err = np.abs(snaps[0][1].values - exact.values).max()
        assert err < 50 * cfg.dt**2  # second-order temporal error

    def test_nan_detection(self, placement64):
        cfg = SchemeConfig(dt=1e-3, model="nonlinear", noise_seed=2)
        engine = TrajectoryEngine(placement64, cfg, [0.01])
        engine.rho0 = engine.rho0.copy()
        engine.rho0[0] = np.nan
        with pytest.raises(NumericalError):
            engine.run_batch([0, 1])


class TestLinearised:
    def test_constant_meanfield_amplitude(self, rho_bump):
        g = Grid(1, 16)
        pl = place_particles(lambda x: np.ones_like(x), g, 160)
        cfg = SchemeConfig(dt=1e-3, model="linearised", noise_seed=3)
        engine = TrajectoryEngine(pl, cfg, [0.01])
        c = pl.matched_density.values[0]
        assert np.allclose(engine._amp_bar, np.sqrt(c), atol=1e-12)

    def test_infinite_particle_limit_is_meanfield(self, rho_bump):
        # N ~ 1e16 scales the noise to 1e-8: trajectory hugs the heat flow
        g = Grid(1, 32)
        counts = place_particles(rho_bump, g, 3200).counts * (10**13)
        pl = InitialPlacement(g, counts, int(counts.sum()))
        cfg = SchemeConfig(dt=1e-3, model="linearised", noise_seed=8)
        snaps, _ = run_trajectory(pl, cfg, [0.4])
        exact = discrete_forward_flow(pl.matched_density, 0.4)
        assert np.abs(snaps[0][1].values - exact.values).max() < 1e-5

    def test_second_moments_match_nonlinear(self, placement64):
        # shared quadratic variation: (2,0) moments agree within 4 sigma
        from dksim.moments import MomentLab, MomentSpec

        phi = TestFunction.from_callable(np.cos, K=8, name="cos")
        spec = MomentSpec.build([(0.4, 2, phi)], tag="2,0")
        lab = MomentLab(placement64, SchemeConfig(dt=1e-3))
        a = lab.estimate_moment(spec, "dk", M=4000, seed=21)
        b = lab.estimate_moment(spec, "dk-linearised", M=4000, seed=22)
        assert abs(a.mean - b.mean) < 4 * np.hypot(a.stderr, b.stderr)


class TestExpectedDk:
    def test_time_zero(self, placement64):
        out = expected_dk(placement64, 0.0)
        assert np.allclose(out.values, placement64.matched_density.values)

    def test_constant_density(self):
        g = Grid(1, 16)
        pl = place_particles(lambda x: np.ones_like(x), g, 160)
        out = expected_dk(pl, 0.7)
        assert np.allclose(out.values, pl.matched_density.values, atol=1e-13)

    def test_pairing_matches_continuous_to_h2(self, rho_bump):
        # (expected_dk(T), I_h phi)_h vs the exact particle expectation:
        # both are heat flows; difference decays at O(h^2)
        phi = TestFunction.from_callable(np.cos, K=8, name="cos")
        T = 0.4
        diffs, hs = [], []
        for k in (3, 4, 5, 6):
            g = Grid(1, 2**k)
            pl = place_particles(rho_bump, g, 10**8)
            lhs = inner_product(expected_dk(pl, T), interpolate(phi.eval, g))
            rhs = expected_pairing(pl, phi, T)
            diffs.append(abs(lhs - rhs))
            hs.append(g.h)
        slope = np.polyfit(np.log(hs), np.log(diffs), 1)[0]
        assert 1.7 <= slope <= 2.3

    def test_deterministic_centering_close_to_spectral(self, placement64):
        cfg = SchemeConfig(dt=1e-3)
        det = deterministic_trajectory(placement64, cfg, [0.4])[0]
        spectral = expected_dk(placement64, 0.4)
        assert np.abs(det.values - spectral.values).max() < 50 * cfg.dt**2


class TestNegativePartReport:
    def test_all_positive(self):
        from dksim.dynamics import TrajectoryMonitor

        mons = [TrajectoryMonitor(0.0, 0.5, 1e-14) for _ in range(10)]
        rep = negative_part_report(mons, N=1000, h=0.1, rho_min=1.0, rho_max=3.0)
        assert rep.mean_sup_neg == 0.0
        assert rep.max_sup_neg == 0.0
        assert rep.fraction_negative == 0.0

    def test_scaling_flag(self):
        from dksim.dynamics import TrajectoryMonitor

        mons = [TrajectoryMonitor(0.0, 0.5, 0.0)]
        rep = negative_part_report(mons, N=1000, h=0.1, rho_min=1.0, rho_max=3.0)
        assert rep.in_scaling_regime  # 0.1 >= 1/1000
        rep2 = negative_part_report(mons, N=1000, h=0.0005, rho_min=1.0, rho_max=3.0)
        assert not rep2.in_scaling_regime

    def test_envelope_shape(self):
        from dksim.dynamics import TrajectoryMonitor

        mons = [TrajectoryMonitor(0.0, 0.5, 0.0)]
        rep = negative_part_report(mons, N=400, h=0.1, rho_min=1.0, rho_max=4.0)
        assert rep.envelope == pytest.approx(np.exp(-np.sqrt(40.0) / 2.0), rel=1e-12)
