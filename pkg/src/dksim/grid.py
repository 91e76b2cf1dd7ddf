"""Uniform periodic grids on the torus [-pi, pi)^d and finite-difference operators.

The grid has L nodes per axis (L even) with spacing h = 2*pi/L, node
coordinates {-pi, -pi+h, ..., pi-h} on every axis.  Grid functions carry
one real value per node.  The discrete inner product is the h^d-weighted
nodal sum, and the discrete Fourier transform is

    c(xi) = h^d * sum_x u(x) exp(-i x.xi),   xi in {-L/2, ..., L/2-1}^d,

so that sum_xi |c(xi)|^2 = (2*pi)^d * ||u||_h^2 (Parseval, with the
(2*pi)^d constant fixed by the h^d-only forward normalization).

Shipped stencils are second-order accurate: the centered first difference
(f(x+h) - f(x-h))/(2h) and the 3-point Laplacian
(f(x+h) - 2 f(x) + f(x-h))/h^2 per axis.  Higher-order stencils can be
constructed through the same Stencil type but are not shipped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class GridError(ValueError):
    """Invalid grid construction or mismatched operands."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with L nodes per axis in d <= 3 dimensions."""

    d: int
    L: int

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise GridError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.L < 4 or self.L % 2 != 0:
            raise GridError(f"nodes per axis must be even and >= 4, got {self.L}")

    @property
    def h(self) -> float:
        return 2.0 * np.pi / self.L

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.L,) * self.d

    @property
    def n_nodes(self) -> int:
        return self.L**self.d

    def axis_coordinates(self) -> np.ndarray:
        """Node coordinates along one axis: -pi, -pi+h, ..., pi-h."""
        return -np.pi + self.h * np.arange(self.L)

    def coordinates(self) -> list[np.ndarray]:
        """Meshgrid of node coordinates, one (L,)*d array per axis."""
        axes = [self.axis_coordinates()] * self.d
        return list(np.meshgrid(*axes, indexing="ij"))

    def axis_frequencies(self) -> np.ndarray:
        """Integer frequencies -L/2 .. L/2-1 in ascending order."""
        return np.arange(-self.L // 2, self.L // 2)

    def frequencies(self) -> list[np.ndarray]:
        """Meshgrid of integer frequencies matching forward_fft's indexing."""
        axes = [self.axis_frequencies()] * self.d
        return list(np.meshgrid(*axes, indexing="ij"))


@dataclass(eq=False)
class GridFunction:
    """Real values on the nodes of a Grid, stored as an (L,)*d array."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}"
            )

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "GridFunction":
        return cls(grid, np.full(grid.shape, float(c)))

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    def check_finite(self) -> "GridFunction":
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("grid function contains NaN/Inf")
        return self


def _require_same_grid(u: GridFunction, v: GridFunction) -> None:
    if u.grid != v.grid:
        raise GridError("grid functions live on different grids")


def inner_product(u: GridFunction, v: GridFunction) -> float:
    """Discrete L^2 pairing (u, v)_h = h^d * sum_x u(x) v(x)."""
    _require_same_grid(u, v)
    return u.grid.h**u.grid.d * float(np.vdot(u.values, v.values).real)


def norm_h(u: GridFunction) -> float:
    """Discrete L^2 norm ||u||_h = sqrt((u, u)_h)."""
    return float(np.sqrt(u.grid.h**u.grid.d) * np.linalg.norm(u.values))


def interpolate(phi: Callable[..., np.ndarray], grid: Grid) -> GridFunction:
    """Nodal interpolant: the grid function agreeing with phi at every node.

    phi is called with d coordinate arrays (one positional argument per
    axis for d > 1, a single array for d = 1).
    """
    coords = grid.coordinates()
    values = np.asarray(phi(*coords), dtype=float)
    values = np.broadcast_to(values, grid.shape).copy()
    return GridFunction(grid, values).check_finite()


@dataclass(frozen=True)
class Stencil:
    """One-dimensional finite-difference stencil, applied along a single axis.

    Coefficients exclude the 1/h (first derivative) or 1/h^2 (second
    derivative) scaling, which is folded in at application time.
    """

    offsets: tuple[int, ...]
    coefficients: tuple[float, ...]
    order: int
    kind: str = field(default="first-derivative")

    def __post_init__(self):
        if len(self.offsets) != len(self.coefficients):
            raise GridError("offsets and coefficients must have equal length")
        if self.kind not in ("first-derivative", "second-derivative"):
            raise GridError(f"unknown stencil kind {self.kind!r}")
        c = dict(zip(self.offsets, self.coefficients))
        if self.kind == "first-derivative":
            if abs(sum(self.coefficients)) > 1e-14:
                raise GridError("first-derivative coefficients must sum to 0")
            moment = sum(k * ck for k, ck in c.items())
            if abs(moment - 1.0) > 1e-14:
                raise GridError("first-derivative stencil must reproduce f(x)=x")
        else:
            for k, ck in c.items():
                if abs(ck - c.get(-k, 0.0)) > 1e-14:
                    raise GridError("second-derivative stencil must be symmetric")

    def apply_along_axis(self, values: np.ndarray, axis: int, h: float) -> np.ndarray:
        """Periodic convolution with the stencil along one array axis."""
        out = np.zeros_like(values)
        for k, ck in zip(self.offsets, self.coefficients):
            if ck == 0.0:
                continue
            # f(x + k h) at node index i is values[i + k], i.e. roll by -k.
            out += ck * np.roll(values, -k, axis=axis)
        scale = h if self.kind == "first-derivative" else h * h
        return out / scale


# The shipped second-order pair: centered first difference and 3-point
# Laplacian factor.  FORWARD_FIRST is the forward difference whose
# adjoint pairing with itself reproduces the 3-point Laplacian.
CENTERED_FIRST = Stencil((-1, 1), (-0.5, 0.5), order=2)
FORWARD_FIRST = Stencil((0, 1), (-1.0, 1.0), order=1)
THREE_POINT_SECOND = Stencil(
    (-1, 0, 1), (1.0, -2.0, 1.0), order=2, kind="second-derivative"
)


def apply_gradient(
    stencil: Stencil, u: GridFunction
) -> list[GridFunction]:
    """Apply a first-derivative stencil along every axis.

    Returns the d components of the discrete gradient.
    """
    if stencil.kind != "first-derivative":
        raise GridError("apply_gradient requires a first-derivative stencil")
    g = u.grid
    return [
        GridFunction(g, stencil.apply_along_axis(u.values, axis, g.h))
        for axis in range(g.d)
    ]


def apply_laplacian(u: GridFunction) -> GridFunction:
    """3-point (2d+1 in d dimensions) symmetric discrete Laplacian."""
    g = u.grid
    out = np.zeros_like(u.values)
    for axis in range(g.d):
        out += THREE_POINT_SECOND.apply_along_axis(u.values, axis, g.h)
    return GridFunction(g, out)


def laplacian_values(values: np.ndarray, h: float, d: int) -> np.ndarray:
    """Array-level 3-point Laplacian for hot loops (no GridFunction wrapping)."""
    out = -2.0 * d * values.astype(float, copy=True)
    for axis in range(d):
        out += np.roll(values, -1, axis=axis) + np.roll(values, 1, axis=axis)
    return out / (h * h)


def _phase(grid: Grid) -> np.ndarray:
    """exp(-i x0 . xi) factor relating node-indexed FFTs to torus coordinates.

    Nodes start at -pi per axis, so the factor is (-1)^(xi_1 + ... + xi_d),
    evaluated on the ascending frequency grid.
    """
    total = sum(grid.frequencies())
    return np.where(total % 2 == 0, 1.0, -1.0)


def forward_fft(u: GridFunction) -> np.ndarray:
    """Discrete Fourier transform c(xi) = h^d sum_x u(x) exp(-i x.xi).

    The returned complex array is indexed by ascending integer frequency
    per axis (xi from -L/2 to L/2-1, see Grid.frequencies).  Satisfies
    sum |c|^2 = (2 pi)^d ||u||_h^2.
    """
    g = u.grid
    spec = np.fft.fftshift(np.fft.fftn(u.values))
    return g.h**g.d * _phase(g) * spec


def inverse_fft(coeffs: np.ndarray, grid: Grid) -> GridFunction:
    """Exact inverse of forward_fft (real part taken)."""
    if coeffs.shape != grid.shape:
        raise GridError("coefficient array shape does not match grid")
    spec = np.fft.ifftshift(coeffs * _phase(grid)) / grid.h**grid.d
    return GridFunction(grid, np.fft.ifftn(spec).real)


def dump_csv(u: GridFunction, path) -> None:
    """Write one row per node: index,x,value with %.17g formatting.

    Nodes are flattened with axis 0 fastest, so index = i0 + L*i1 + ...
    For d > 1 the x column holds the axis-0 coordinate of the node.
    """
    g = u.grid
    flat = u.values.flatten(order="F")
    coords = g.coordinates()[0].flatten(order="F")
    with open(path, "w") as f:
        f.write("index,x,value\n")
        for i, (x, v) in enumerate(zip(coords, flat)):
            f.write("%d,%.17g,%.17g\n" % (i, x, v))


def load_csv(path, grid: Grid) -> GridFunction:
    """Read a grid function written by dump_csv back onto its grid."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, usecols=2)
    values = np.asarray(data, dtype=float).reshape(grid.shape, order="F")
    return GridFunction(grid, values)
