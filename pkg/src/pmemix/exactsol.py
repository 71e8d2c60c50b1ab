"""Separable exact solution of the deterministic porous medium dynamics.

Searching for solutions of the form u(t, x) = (1+t)^{-1/(m-1)} f(x) of
u_t = (|u|^{m-1} u)_xx with zero boundary values leads to the nonlinear
eigenproblem

    (|f|^{m-1} f)'' + f/(m-1) = 0,   f = 0 on the boundary.

The substitution v = f^m (for the positive branch) turns this into the
smooth ODE  v'' = -v^{1/m}/(m-1).  The profile is even about the midpoint,
so we shoot from the midpoint with v' = 0 and bisect on the midpoint value
until v vanishes at the boundary; the integrator stops at the first zero
crossing, which keeps the shot well defined for overshooting amplitudes.
The negative branch is -f by oddness.

The resulting separable solution is the solver's regression oracle and the
anchor for the optimality of the t^{-1/(m-1)} decay rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from ._errors import ConfigError
from .domain import Grid1D, GridFunction, laplacian_values

__all__ = ["Profile", "solve_profile", "separable_solution"]


@dataclass(frozen=True)
class Profile:
    """Nonnegative, nonzero decay profile with its measured discrete residual."""

    grid: Grid1D
    f: GridFunction
    m: float
    residual_norm: float
    midpoint_value: float  # v(mid) = f(mid)^m


def _shoot(p: float, m: float, half_length: float, rtol: float, dense: bool):
    """Integrate v'' = -v^{1/m}/(m-1) from (v, v') = (p, 0) over [0, half_length].

    Returns (mismatch, solution): mismatch > 0 when v stays positive through
    the half interval (midpoint value too large), < 0 when v crosses zero
    early (too small); zero mismatch means the first crossing sits exactly on
    the boundary.
    """
    c = 1.0 / (m - 1.0)

    def rhs(_x, y):
        return [y[1], -c * np.sign(y[0]) * np.abs(y[0]) ** (1.0 / m)]

    def crossing(_x, y):
        return y[0]

    crossing.terminal = True
    crossing.direction = -1
    sol = solve_ivp(rhs, (0.0, half_length), [p, 0.0], events=crossing,
                    rtol=rtol, atol=1e-14, dense_output=dense)
    if sol.t_events[0].size:
        return -(half_length - float(sol.t_events[0][0])), sol
    return float(sol.y[0, -1]), sol


def solve_profile(grid: Grid1D, m: float, tol: float = 1e-10,
                  max_iterations: int = 200) -> Profile:
    """Shooting/bisection solve of the profile eigenproblem on the grid's interval."""
    if m <= 1:
        raise ConfigError(f"profile needs m > 1, got m={m}")
    if tol <= 0:
        raise ConfigError(f"tolerance must be positive, got {tol}")
    half = 0.5 * grid.length
    rtol = min(1e-11, tol * 1e-2)

    lo, hi = 1e-8, 1.0
    for _ in range(200):
        if _shoot(lo, m, half, rtol, False)[0] < 0:
            break
        lo *= 0.5
    for _ in range(200):
        if _shoot(hi, m, half, rtol, False)[0] > 0:
            break
        hi *= 2.0

    p, sol = hi, None
    converged = False
    for _ in range(max_iterations):
        p = 0.5 * (lo + hi)
        mismatch, sol = _shoot(p, m, half, rtol, False)
        if hi - lo <= tol * max(p, 1e-300):
            converged = True
            break
        if mismatch > 0:
            hi = p
        else:
            lo = p
    if not converged:
        raise RuntimeError(
            f"profile shooting did not converge after {max_iterations} iterations; "
            f"bracket [{lo:.6e}, {hi:.6e}], last mismatch {mismatch:.3e}")

    _, sol = _shoot(p, m, half, rtol, True)
    mid = 0.5 * (grid.a + grid.b)
    dist = np.minimum(np.abs(grid.nodes - mid), half * (1.0 - 1e-15))
    v = np.maximum(sol.sol(dist)[0], 0.0)
    f_values = v ** (1.0 / m)

    residual = laplacian_values(f_values**m, grid.h) + f_values / (m - 1.0)
    return Profile(grid=grid, f=GridFunction(grid, f_values), m=m,
                   residual_norm=float(np.max(np.abs(residual))),
                   midpoint_value=p)


def separable_solution(profile: Profile, t: float) -> GridFunction:
    """u(t, x) = (1+t)^{-1/(m-1)} f(x)."""
    if t < 0:
        raise ConfigError(f"time must be nonnegative, got t={t}")
    scale = (1.0 + t) ** (-1.0 / (profile.m - 1.0))
    return GridFunction(profile.grid, scale * profile.f.values)
