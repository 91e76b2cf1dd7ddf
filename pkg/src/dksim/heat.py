"""Heat semigroup machinery: smooth test functions and backward/forward flows.

Test functions are smooth periodic functions on the circle carrying both a
closed-form evaluator (when one exists) and a truncated Fourier series.
Flowing a test function backward in time by the heat semigroup damps its
coefficients by exp(-(xi^2/2) z); the discrete counterpart damps grid
functions by exp(-P(h, xi) z) with the 3-point Laplacian symbol

    P(h, xi) = sum_l (1 - cos(h xi_l)) / h^2.

Discrete flows are computed spectrally -- exact solutions of the
semi-discrete heat equation, with no time-stepping error -- so they can
serve as exact expectation operators and centering oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .grid import Grid, GridFunction, GridError, inner_product, interpolate, norm_h

# Registry of named closed-form evaluators.  Test functions built from a
# registered formula stay picklable: only the name crosses process
# boundaries and the closure is looked up again on arrival.
FORMULAS: dict[str, Callable[[np.ndarray], np.ndarray]] = {}


def register_formula(name: str, fn: Callable[[np.ndarray], np.ndarray]) -> None:
    FORMULAS[name] = fn


@dataclass(eq=False)
class TestFunction:
    """Real smooth periodic function with a bandwidth-K Fourier series.

    coeffs[j] is the coefficient of exp(i xi x) for xi = j - K, with the
    conjugate symmetry of a real function.  eval() prefers the closed form
    when one is attached and falls back to summing the series.
    """

    __test__ = False  # keep pytest from collecting this as a test class

    coeffs: np.ndarray
    tail_tol: float = 1e-12
    name: str = "phi"
    formula: Optional[str] = None

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.ndim != 1 or self.coeffs.size % 2 == 0:
            raise ValueError("coefficient array must have odd length 2K+1")
        # Enforce conjugate symmetry so the function is exactly real.
        sym = 0.5 * (self.coeffs + np.conj(self.coeffs[::-1]))
        self.coeffs = sym

    @property
    def K(self) -> int:
        return self.coeffs.size // 2

    # -- construction ---------------------------------------------------

    @classmethod
    def from_callable(
        cls,
        fn: Callable[[np.ndarray], np.ndarray] | str,
        K: int = 256,
        samples: int | None = None,
        tail_tol: float = 1e-12,
        name: str | None = None,
    ) -> "TestFunction":
        """Build the series by FFT of a dense sampling of fn.

        fn may be a callable or the name of a registered formula.  The
        default sampling density is 4K points; rough functions should pass
        a larger value together with an honest tail_tol.
        """
        formula = None
        if isinstance(fn, str):
            formula = fn
            fn = FORMULAS[fn]
        M = samples if samples is not None else 4 * K
        if M < 2 * K + 2:
            raise ValueError("need more than 2K+1 samples to resolve the series")
        x = -np.pi + 2.0 * np.pi * np.arange(M) / M
        spec = np.fft.fft(np.asarray(fn(x), dtype=float)) / M
        xi = np.arange(-K, K + 1)
        # c(xi) = (1/M) (-1)^xi FFT[xi mod M], the -pi node offset unwound.
        coeffs = np.where(xi % 2 == 0, 1.0, -1.0) * spec[xi % M]
        out = cls(coeffs, tail_tol=tail_tol, name=name or getattr(fn, "__name__", "phi"))
        out.formula = formula
        out._eval_fn = fn
        return out

    @classmethod
    def from_coefficients(
        cls, coeffs: np.ndarray, tail_tol: float = 1e-12, name: str = "phi"
    ) -> "TestFunction":
        return cls(np.asarray(coeffs, dtype=complex), tail_tol=tail_tol, name=name)

    # -- evaluation ------------------------------------------------------

    _eval_fn: Optional[Callable] = field(default=None, repr=False)

    def eval(self, x: np.ndarray) -> np.ndarray:
        fn = self._eval_fn
        if fn is None and self.formula is not None:
            fn = self._eval_fn = FORMULAS[self.formula]
        if fn is not None:
            return np.asarray(fn(np.asarray(x, dtype=float)), dtype=float)
        return self.series_eval(x)

    __call__ = eval

    def series_eval(self, x: np.ndarray) -> np.ndarray:
        """Sum the truncated series by Horner recursion in exp(i x)."""
        x = np.asarray(x, dtype=float)
        c = self.coeffs
        K = self.K
        E = np.exp(1j * x)
        acc = np.zeros_like(E)
        for j in range(2 * K, K, -1):  # xi = K .. 1
            acc = (acc + c[j]) * E
        return np.real(c[K]) + 2.0 * np.real(acc)

    def tail_error(self, n_samples: int | None = None) -> float:
        """Sup disagreement between eval() and the series on a dense sample."""
        n = n_samples if n_samples is not None else max(10 * self.K, 64)
        x = -np.pi + 2.0 * np.pi * np.arange(n) / n
        return float(np.max(np.abs(self.eval(x) - self.series_eval(x))))

    # -- calculus on the series -------------------------------------------

    def derivative(self) -> "TestFunction":
        """Exact derivative of the truncated series."""
        xi = np.arange(-self.K, self.K + 1)
        return TestFunction(1j * xi * self.coeffs, self.tail_tol, self.name + "'")

    def square(self) -> "TestFunction":
        """Pointwise square, exact: bandwidth doubles to 2K."""
        c = np.convolve(self.coeffs, self.coeffs)
        return TestFunction(c, self.tail_tol, f"({self.name})^2")

    def truncate(self, K: int) -> "TestFunction":
        """Project onto bandwidth K (pad with zeros if K grows)."""
        old = self.K
        if K <= old:
            c = self.coeffs[old - K : old + K + 1]
        else:
            c = np.zeros(2 * K + 1, dtype=complex)
            c[K - old : K + old + 1] = self.coeffs
        return TestFunction(c, self.tail_tol, self.name)

    def l2_norm(self) -> float:
        """Torus L^2 norm: (2 pi sum |c|^2)^(1/2)."""
        return float(np.sqrt(2.0 * np.pi * np.sum(np.abs(self.coeffs) ** 2)))

    def normalized(self) -> "TestFunction":
        return TestFunction(
            self.coeffs / self.l2_norm(), self.tail_tol, self.name + "/||.||"
        )

    def compressed(self, rel_tol: float = 1e-13) -> "TestFunction":
        """Drop negligible high modes; used to keep point evaluation cheap."""
        mags = np.abs(self.coeffs)
        cut = rel_tol * float(mags.max())
        keep = np.nonzero(mags > cut)[0]
        if keep.size == 0:
            return self.truncate(0)
        K_eff = max(abs(int(k) - self.K) for k in keep)
        return self.truncate(max(K_eff, 1))

    # -- pickling (closures stay behind; registered formulas travel by name)

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_eval_fn"] = None
        return state


def constant_function(c: float) -> TestFunction:
    return TestFunction(np.array([complex(c)]), name=f"{c}")


def continuous_backward_flow(phi: TestFunction, span: float) -> TestFunction:
    """Heat-semigroup image of phi after backward time span z >= 0.

    Coefficients are damped by exp(-(xi^2/2) z); the result evaluates
    through the damped series.
    """
    if span < 0:
        raise ValueError("flow span must be nonnegative")
    xi = np.arange(-phi.K, phi.K + 1)
    damped = np.exp(-0.5 * xi.astype(float) ** 2 * span) * phi.coeffs
    out = TestFunction(damped, phi.tail_tol, f"P^{span}({phi.name})")
    if span == 0.0:
        out._eval_fn = phi._eval_fn
        out.formula = phi.formula
    return out


@dataclass(frozen=True)
class SpectralSymbol:
    """Fourier multiplier xi -> P(h, xi) >= 0 of (1/2) times a discrete Laplacian.

    The symbol is 2*pi/h-periodic in each frequency (h L = 2*pi), so
    lookups wrap modulo L: P(h, L/2) = P(h, -L/2) exactly.
    """

    grid: Grid
    table: np.ndarray  # indexed like Grid.frequencies(), ascending xi

    def __call__(self, *xi: int) -> float:
        L = self.grid.L
        idx = tuple((int(x) + L // 2) % L for x in xi)
        return float(self.table[idx])


def laplacian_symbol(grid: Grid) -> SpectralSymbol:
    """Symbol of -(1/2) * (3-point Laplacian): sum_l (1 - cos(h xi_l)) / h^2."""
    h = grid.h
    table = np.zeros(grid.shape)
    for f in grid.frequencies():
        table = table + (1.0 - np.cos(h * f)) / (h * h)
    return SpectralSymbol(grid, table)


def _symbol_unshifted(grid: Grid) -> np.ndarray:
    """P(h, xi) on the natural (unshifted) FFT frequency layout."""
    h = grid.h
    out = np.zeros(grid.shape)
    freqs = np.fft.fftfreq(grid.L, d=1.0 / grid.L)
    mesh = np.meshgrid(*([freqs] * grid.d), indexing="ij")
    for f in mesh:
        out = out + (1.0 - np.cos(h * f)) / (h * h)
    return out


def _spectral_damp(u: GridFunction, span: float) -> GridFunction:
    if span < 0:
        raise ValueError("flow span must be nonnegative")
    kernel = np.exp(-_symbol_unshifted(u.grid) * span)
    spec = np.fft.fftn(u.values) * kernel
    return GridFunction(u.grid, np.fft.ifftn(spec).real)


def discrete_backward_flow(phi_h: GridFunction, span: float) -> GridFunction:
    """Exact solution of the discrete backward heat equation over a span.

    Grid-function coefficients are damped by exp(-P(h, xi) z).  Obeys the
    discrete maximum principle of the 3-point Laplacian.
    """
    return _spectral_damp(phi_h, span)


def discrete_forward_flow(rho_h: GridFunction, span: float) -> GridFunction:
    """Exact solution of the discrete heat equation (mass preserved exactly)."""
    return _spectral_damp(rho_h, span)


def gradient_product_error(
    phi1: TestFunction,
    phi2: TestFunction,
    grid: Grid,
    span: float,
    stencil=None,
) -> float:
    """||grad_h P_h^z(I_h phi1) . grad_h P_h^z(I_h phi2) - I_h(grad P^z phi1 . grad P^z phi2)||_h.

    Measures how far the discrete gradient product of discretely flowed
    interpolants sits from the interpolated continuous gradient product.
    """
    from .grid import CENTERED_FIRST, apply_gradient

    st = stencil if stencil is not None else CENTERED_FIRST
    if grid.d != 1:
        raise GridError("gradient_product_error is a d=1 diagnostic")

    d1 = apply_gradient(st, discrete_backward_flow(interpolate(phi1.eval, grid), span))[0]
    d2 = apply_gradient(st, discrete_backward_flow(interpolate(phi2.eval, grid), span))[0]

    g1 = continuous_backward_flow(phi1, span).derivative()
    g2 = continuous_backward_flow(phi2, span).derivative()
    cont = interpolate(lambda x: g1.series_eval(x) * g2.series_eval(x), grid)

    diff = GridFunction(grid, d1.values * d2.values - cont.values)
    return norm_h(diff)


class DenseEvaluator:
    """Fast point evaluation through a periodic cubic spline on a dense grid.

    Built on a 2^14-node grid from the function's best available
    representation; absolute error is a few 1e-12 for the smooth
    functions used in the Monte Carlo hot paths, far below Monte Carlo
    noise, and roughly fourth order in the table spacing in general.
    Oracles keep using exact evaluation.
    """

    GRID_SIZE = 1 << 14

    def __init__(self, phi: TestFunction):
        n = self.GRID_SIZE
        x = -np.pi + 2.0 * np.pi * np.arange(n + 1) / n
        if phi._eval_fn is not None or phi.formula is not None:
            y = phi.eval(x)
        else:
            y = phi.compressed().series_eval(x)
        y = np.asarray(y, dtype=float).copy()
        y[-1] = y[0]  # enforce exact periodicity for the spline
        spline = CubicSpline(x, y, bc_type="periodic")
        self._c = np.ascontiguousarray(spline.c)  # (4, n)
        self._dx = 2.0 * np.pi / n
        self._x0 = -np.pi

    def __call__(self, x: np.ndarray) -> np.ndarray:
        t = (np.asarray(x, dtype=float) - self._x0) / self._dx
        idx = t.astype(np.int64)
        np.clip(idx, 0, self.GRID_SIZE - 1, out=idx)
        s = (t - idx) * self._dx
        c = self._c
        return ((c[0, idx] * s + c[1, idx]) * s + c[2, idx]) * s + c[3, idx]


def fast_pointwise(phi: TestFunction) -> Callable[[np.ndarray], np.ndarray]:
    """Cheapest accurate point evaluator for phi.

    Smooth functions (declared tail tolerance at or below 1e-10) get a
    dense cubic-spline surrogate, which beats re-evaluating
    transcendental closed forms on millions of points.  Rough functions
    keep their exact closure: spline error concentrates at their kinks.
    """
    if phi.tail_tol <= 1e-10 or (phi._eval_fn is None and phi.formula is None):
        return DenseEvaluator(phi)
    return phi.eval
