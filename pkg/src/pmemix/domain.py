"""Uniform interval mesh, the Dirichlet weight, and the discrete norms.

Everything lives on the interior nodes of a uniform mesh over (a, b); the
boundary values are implicit zeros (homogeneous Dirichlet).  All integrals
are interior nodal sums times the mesh width, which is consistent with the
zero boundary values and second-order accurate for smooth integrands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solveh_banded

from ._errors import ConfigError

__all__ = [
    "Grid1D", "GridFunction", "Weight",
    "build_grid", "grid_function", "solve_weight",
    "weighted_l1_norm", "lp_norm", "discrete_laplacian",
    "bump_profile", "sine_profile",
]


@dataclass(frozen=True)
class Grid1D:
    """Uniform mesh on (a, b) with N interior nodes and width h = (b-a)/(N+1)."""

    a: float
    b: float
    N: int
    h: float

    @property
    def nodes(self) -> NDArray[np.float64]:
        """Interior node coordinates x_i = a + i*h, i = 1..N."""
        return self.a + self.h * np.arange(1, self.N + 1)

    @property
    def length(self) -> float:
        return self.b - self.a


@dataclass(frozen=True)
class GridFunction:
    """Real field on the interior nodes of a grid; boundary values are zero."""

    grid: Grid1D
    values: NDArray[np.float64]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.grid.N,):
            raise ConfigError(
                f"field has {v.shape} values, grid has {self.grid.N} interior nodes")
        if not np.all(np.isfinite(v)):
            raise ConfigError("field contains nonfinite values")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Weight:
    """Discrete solution of the Dirichlet problem  laplacian(w) = -1,  w = 0 on the boundary.

    Interior values are strictly positive.  Lp norms of the weight are computed
    on demand and cached per exponent.
    """

    grid: Grid1D
    values: NDArray[np.float64]
    lp_norms: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def lp(self, p: float) -> float:
        """Cached ||w||_{L^p} via interior nodal quadrature."""
        if p not in self.lp_norms:
            self.lp_norms[p] = lp_norm(GridFunction(self.grid, self.values), p)
        return self.lp_norms[p]


def build_grid(a: float, b: float, N: int) -> Grid1D:
    """Uniform grid with N interior nodes on (a, b)."""
    if not b > a:
        raise ConfigError(f"interval endpoints must satisfy b > a, got a={a}, b={b}")
    if N < 3:
        raise ConfigError(f"need at least 3 interior nodes, got N={N}")
    return Grid1D(a=float(a), b=float(b), N=int(N), h=(b - a) / (N + 1))


def grid_function(grid: Grid1D, values) -> GridFunction:
    return GridFunction(grid, np.asarray(values, dtype=np.float64))


def solve_weight(grid: Grid1D) -> Weight:
    """Solve the tridiagonal system (w_{i+1} - 2 w_i + w_{i-1})/h^2 = -1 with zero boundaries.

    The system is symmetric positive definite; a direct banded Cholesky solve
    is used.  On (0, 1) the solution is exactly x(1-x)/2 at the nodes because
    second differences of quadratics are exact.
    """
    N, h = grid.N, grid.h
    ab = np.zeros((2, N))
    ab[0, 1:] = -1.0
    ab[1, :] = 2.0
    w = solveh_banded(ab, np.full(N, h * h), check_finite=False)
    return Weight(grid=grid, values=w)


def _check_same_grid(f: GridFunction, g) -> None:
    if f.grid != g.grid:
        raise ConfigError("fields live on different grids")


def weighted_l1_norm(f: GridFunction, w: Weight) -> float:
    """||f||_{L^1_w} = sum_i |f_i| w_i h."""
    _check_same_grid(f, w)
    return float(np.sum(np.abs(f.values) * w.values) * f.grid.h)


def lp_norm(f: GridFunction, p: float) -> float:
    """(sum_i |f_i|^p h)^{1/p} for p >= 1."""
    if p < 1:
        raise ConfigError(f"Lp norm needs p >= 1, got p={p}")
    return float((np.sum(np.abs(f.values) ** p) * f.grid.h) ** (1.0 / p))


def laplacian_values(values: NDArray[np.float64], h: float) -> NDArray[np.float64]:
    """Three-point Laplacian with zero Dirichlet ghost values; acts on the last axis."""
    padded = np.zeros(values.shape[:-1] + (values.shape[-1] + 2,))
    padded[..., 1:-1] = values
    return (padded[..., 2:] - 2.0 * padded[..., 1:-1] + padded[..., :-2]) / (h * h)


def discrete_laplacian(f: GridFunction) -> GridFunction:
    return GridFunction(f.grid, laplacian_values(f.values, f.grid.h))


def bump_profile(grid: Grid1D, amplitude: float = 1.0, center: float = 0.5,
                 width: float = 0.4) -> GridFunction:
    """Smooth compactly supported bump with the given peak value.

    `center` and `width` are relative to the interval length; the support is
    strictly inside (a, b) whenever center +- width stays inside (0, 1).
    """
    x = grid.nodes
    s = (x - (grid.a + center * grid.length)) / (width * grid.length)
    inside = np.abs(s) < 1.0
    v = np.zeros_like(x)
    v[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return GridFunction(grid, amplitude * v)


def sine_profile(grid: Grid1D, mode: int = 1, amplitude: float = 1.0) -> GridFunction:
    """Discrete sine mode sin(k pi (x-a)/(b-a)), an eigenvector of the discrete Laplacian."""
    x = grid.nodes
    return GridFunction(grid, amplitude * np.sin(mode * np.pi * (x - grid.a) / grid.length))
