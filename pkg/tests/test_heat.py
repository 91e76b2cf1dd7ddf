"""Test functions, spectral symbols, and exact heat flows."""

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
from dksim.heat import (
    DenseEvaluator,
    TestFunction,
    constant_function,
    continuous_backward_flow,
    discrete_backward_flow,
    discrete_forward_flow,
    fast_pointwise,
    gradient_product_error,
    laplacian_symbol,
)
from dksim.presets import bump6, sqrtsin


@pytest.fixture(scope="module")
def phi_bump():
    return TestFunction.from_callable(bump6, K=256, name="bump6")


class TestTestFunction:
    def test_series_matches_closure(self, phi_bump):
        assert phi_bump.tail_error() < 1e-12

    def test_real_symmetry(self, phi_bump):
        c = phi_bump.coeffs
        assert np.allclose(c, np.conj(c[::-1]), atol=1e-16)

    def test_rough_function_needs_honest_tolerance(self):
        rough = TestFunction.from_callable(
            sqrtsin, K=256, samples=1 << 18, tail_tol=5e-2, name="sqrtsin"
        )
        err = rough.tail_error()
        assert 1e-4 < err <= rough.tail_tol

    def test_derivative_matches_sympy(self):
        import sympy

        xs = sympy.Symbol("x")
        expr = 3 - 2 * sympy.exp(-sympy.sin(xs / 2) ** 6 / sympy.Rational(1, 20))
        dfn = sympy.lambdify(xs, sympy.diff(expr, xs), modules="numpy")
        phi = TestFunction.from_callable(bump6, K=256)
        x = np.linspace(-np.pi, np.pi, 301)
        assert np.abs(phi.derivative().series_eval(x) - dfn(x)).max() < 1e-9

    def test_square_exact_bandwidth(self):
        phi = TestFunction.from_callable(np.cos, K=4, name="cos")
        sq = phi.square()
        assert sq.K == 8
        x = np.linspace(-np.pi, np.pi, 101)
        assert np.abs(sq.series_eval(x) - np.cos(x) ** 2).max() < 1e-13

    def test_l2_norm_and_normalized(self):
        phi = TestFunction.from_callable(np.cos, K=4)
        # ||cos||_{L2} = sqrt(pi)
        assert phi.l2_norm() == pytest.approx(np.sqrt(np.pi), rel=1e-12)
        assert phi.normalized().l2_norm() == pytest.approx(1.0, rel=1e-12)

    def test_truncate_pads_and_cuts(self, phi_bump):
        cut = phi_bump.truncate(16)
        assert cut.K == 16
        padded = cut.truncate(32)
        assert padded.K == 32
        assert np.allclose(padded.coeffs[16:-16], cut.coeffs)

    def test_pickle_drops_closure_keeps_formula(self):
        import pickle

        phi = TestFunction.from_callable("bump6", K=64)
        back = pickle.loads(pickle.dumps(phi))
        x = np.linspace(-np.pi, np.pi, 50)
        assert np.array_equal(back.eval(x), phi.eval(x))


class TestContinuousFlow:
    def test_zero_span_identity(self, phi_bump):
        out = continuous_backward_flow(phi_bump, 0.0)
        assert np.array_equal(out.coeffs, phi_bump.coeffs)

    def test_cos_damps_by_half_rate(self):
        phi = TestFunction.from_callable(np.cos, K=4)
        out = continuous_backward_flow(phi, 0.5)
        x = np.linspace(-np.pi, np.pi, 33)
        assert np.abs(out.series_eval(x) - np.exp(-0.25) * np.cos(x)).max() < 1e-14

    def test_constant_invariant(self):
        one = constant_function(1.0)
        out = continuous_backward_flow(one, 2.0)
        assert out.series_eval(np.array([0.3]))[0] == pytest.approx(1.0, abs=1e-15)

    def test_semigroup(self, phi_bump):
        ab = continuous_backward_flow(
            continuous_backward_flow(phi_bump, 0.1), 0.3
        )
        once = continuous_backward_flow(phi_bump, 0.4)
        assert np.abs(ab.coeffs - once.coeffs).max() < 1e-12

    def test_negative_span_rejected(self, phi_bump):
        with pytest.raises(ValueError):
            continuous_backward_flow(phi_bump, -0.1)


class TestSymbol:
    def test_zero_mode(self):
        sym = laplacian_symbol(Grid(1, 16))
        assert sym(0) == 0.0

    def test_value_both_routes(self):
        # direct evaluation vs the stencil eigenvalue read off exp(i x)
        g = Grid(1, 8)  # h = pi/4
        sym = laplacian_symbol(g)
        direct = (1.0 - np.cos(np.pi / 4)) / (np.pi / 4) ** 2
        assert sym(1) == pytest.approx(direct, rel=1e-14)
        from dksim.grid import apply_laplacian

        u_c = interpolate(np.cos, g)
        eig = -(apply_laplacian(u_c).values[0] / u_c.values[0])
        assert sym(1) == pytest.approx(eig / 2.0, rel=1e-12)
        assert 0.4748 < sym(1) < 0.4749

    def test_nonnegative_and_bounded(self):
        for L in (8, 16, 64):
            g = Grid(1, L)
            sym = laplacian_symbol(g)
            table = sym.table
            assert table.min() >= 0.0
            for xi in range(-L // 4, L // 4 + 1):
                gap = abs(0.5 * xi**2 - sym(xi))
                assert gap <= max(abs(xi), 1) ** 4 * g.h**2

    def test_symbol_consistency_sweep(self):
        gaps, hs = [], []
        for k in range(3, 9):
            g = Grid(1, 2**k)
            sym = laplacian_symbol(g)
            gaps.append(max(abs(0.5 * xi**2 - sym(xi)) for xi in range(-4, 5)))
            hs.append(g.h)
        slope = np.polyfit(np.log(hs), np.log(gaps), 1)[0]
        assert 1.8 <= slope <= 2.2


class TestDiscreteFlows:
    def test_zero_span_identity(self):
        g = Grid(1, 32)
        rng = np.random.default_rng(2)
        u = GridFunction(g, rng.standard_normal(32))
        out = discrete_backward_flow(u, 0.0)
        assert np.abs(out.values - u.values).max() < 1e-13

    def test_constant_invariant(self):
        g = Grid(1, 32)
        u = GridFunction.constant(g, 5.0)
        assert np.abs(discrete_forward_flow(u, 3.0).values - 5.0).max() < 1e-12

    def test_mass_conserved(self):
        g = Grid(1, 128)
        rng = np.random.default_rng(4)
        u = GridFunction(g, 1.0 + np.abs(rng.standard_normal(128)))
        one = GridFunction.constant(g, 1.0)
        out = discrete_forward_flow(u, 1.0)
        assert abs(inner_product(out, one) - inner_product(u, one)) < 1e-12

    def test_max_principle(self):
        g = Grid(1, 64)
        rng = np.random.default_rng(6)
        u = GridFunction(g, rng.standard_normal(64))
        for z in (0.01, 0.1, 1.0):
            out = discrete_forward_flow(u, z)
            assert out.values.max() <= u.values.max() + 1e-12
            assert out.values.min() >= u.values.min() - 1e-12

    def test_semigroup(self):
        g = Grid(1, 64)
        rng = np.random.default_rng(8)
        u = GridFunction(g, rng.standard_normal(64))
        two = discrete_backward_flow(discrete_backward_flow(u, 0.2), 0.3)
        once = discrete_backward_flow(u, 0.5)
        assert np.abs(two.values - once.values).max() < 1e-12

    def test_forward_backward_identity_bandlimited(self):
        g = Grid(1, 64)
        u = interpolate(lambda x: np.cos(x) + 0.5 * np.sin(2 * x), g)
        back = discrete_backward_flow(u, 0.3)
        # invert mode by mode: amplify the two active modes exactly
        sym = laplacian_symbol(g)
        c = np.fft.rfft(back.values)
        for xi in (1, 2):
            c[xi] *= np.exp(sym(xi) * 0.3)
        restored = np.fft.irfft(c, n=64)
        assert np.abs(restored - u.values).max() < 1e-10

    def test_negative_span_rejected(self):
        g = Grid(1, 16)
        with pytest.raises(ValueError):
            discrete_forward_flow(GridFunction.constant(g, 1.0), -0.5)

    def test_mean_field_stays_within_bounds(self, phi_bump):
        # initial data in [1, 3] keeps its bounds under the discrete flow
        g = Grid(1, 64)
        u = interpolate(bump6, g)
        for z in np.linspace(0.0, 1.0, 11):
            out = discrete_forward_flow(u, float(z))
            assert out.values.min() >= 1.0 - 1e-12
            assert out.values.max() <= 3.0 + 1e-12

    def test_flow_error_second_order(self, phi_bump):
        errs, hs = [], []
        for k in (4, 5, 6):
            g = Grid(1, 2**k)
            cont = interpolate(
                continuous_backward_flow(phi_bump, 0.4).series_eval, g
            )
            disc = discrete_backward_flow(interpolate(bump6, g), 0.4)
            errs.append(norm_h(GridFunction(g, cont.values - disc.values)))
            hs.append(g.h)
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert 1.8 <= slope <= 2.2

    def test_gradient_flow_error_second_order(self, phi_bump):
        # discrete gradient of the discrete flow vs exact gradient of the
        # continuous flow, sup norm
        errs, hs = [], []
        for k in (4, 5, 6):
            g = Grid(1, 2**k)
            exact = continuous_backward_flow(phi_bump, 0.4).derivative()
            (disc,) = apply_gradient(
                CENTERED_FIRST, discrete_backward_flow(interpolate(bump6, g), 0.4)
            )
            errs.append(
                np.abs(disc.values - exact.series_eval(g.axis_coordinates())).max()
            )
            hs.append(g.h)
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert 1.8 <= slope <= 2.2


class TestGradientProductError:
    def test_constant_gives_zero(self):
        g = Grid(1, 32)
        one = constant_function(1.0)
        phi = TestFunction.from_callable(np.cos, K=8)
        assert gradient_product_error(one, phi, g, 0.3) < 1e-13

    def test_cos_pair_closed_form(self):
        # at z = 0 the error is |(sin h / h)^2 - 1| * ||sin^2||_h
        g = Grid(1, 16)
        phi = TestFunction.from_callable(np.cos, K=4)
        got = gradient_product_error(phi, phi, g, 0.0)
        x = g.axis_coordinates()
        factor = (np.sin(g.h) / g.h) ** 2 - 1.0
        expect = norm_h(GridFunction(g, factor * np.sin(x) ** 2))
        assert got == pytest.approx(expect, rel=1e-10)

    def test_figure_pair_second_order(self, phi_bump):
        from dksim.presets import make_test_pair

        phi1, phi2 = make_test_pair(phi_bump, 0.4)
        errs, hs = [], []
        for k in (4, 5, 6):
            g = Grid(1, 2**k)
            errs.append(gradient_product_error(phi1, phi2, g, 0.4))
            hs.append(g.h)
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert 1.8 <= slope <= 2.2


class TestFastEvaluation:
    def test_dense_evaluator_accuracy(self, phi_bump):
        from dksim.presets import make_test_pair

        _, phi2 = make_test_pair(phi_bump, 0.4)
        ev = DenseEvaluator(phi2)
        x = np.random.default_rng(21).uniform(-np.pi, np.pi, 20000)
        assert np.abs(ev(x) - phi2.series_eval(x)).max() < 1e-10

    def test_fast_pointwise_policy(self, phi_bump):
        rough = TestFunction.from_callable(
            sqrtsin, K=64, samples=1 << 16, tail_tol=5e-2
        )
        assert fast_pointwise(rough) == rough.eval  # exactness over speed
        assert isinstance(fast_pointwise(phi_bump), DenseEvaluator)
