"""Diagnostics that turn trajectories into verdicts: rate fits, contraction and
coming-down statistics, mixing-gap estimation, entropy residuals, and the small
analytic utility functions they rely on."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.stats import t as student_t

from ._errors import ConfigError
from .domain import Grid1D
from .model import NoiseModel, Nonlinearity
from .solver import CoupledRecords, EnsembleStats

__all__ = [
    "DecaySeries", "RateFit", "Verdict",
    "series_from_stats", "fit_power_exponent", "contraction_check",
    "theoretical_envelope", "ode_comparison", "coming_down_statistic",
    "mixing_gap", "entropy_residual", "eta_delta", "g_alpha",
    "schedule_delta", "nu_interval", "vanishing_alpha",
    "lower_bound_check", "make_test_function",
]


@dataclass
class DecaySeries:
    """Sampled curve t -> mean value with Monte Carlo standard errors."""

    times: NDArray[np.float64]
    values: NDArray[np.float64]
    stderr: NDArray[np.float64]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.stderr = np.asarray(self.stderr, dtype=np.float64)
        if not (len(self.times) == len(self.values) == len(self.stderr)):
            raise ConfigError("series arrays must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ConfigError("series times must be strictly increasing")

    def restrict(self, t_lo: float, t_hi: float) -> "DecaySeries":
        mask = (self.times >= t_lo) & (self.times <= t_hi)
        return DecaySeries(self.times[mask], self.values[mask], self.stderr[mask])


def series_from_stats(stats: EnsembleStats, key: str) -> DecaySeries:
    return DecaySeries(stats.times, stats.mean[key], stats.stderr[key])


@dataclass
class RateFit:
    """Least-squares power-law fit in log-log coordinates with a 95% CI."""

    exponent: float
    intercept: float
    ci_halfwidth: float
    window: tuple[float, float]


@dataclass
class Verdict:
    """Outcome of one checked inequality with the offending times, if any."""

    name: str
    passed: bool
    violations: list[tuple[float, float]] = field(default_factory=list)
    details: dict = field(default_factory=dict)


def fit_power_exponent(series: DecaySeries, window: tuple[float, float],
                       t_shift: float = 0.0) -> RateFit:
    """Slope of log(value) against log(t + t_shift) inside the window.

    ``t_shift`` shifts the clock; exact separable decay (1+t)^p is a pure
    power law only in the shifted clock t_shift = 1.
    """
    t_lo, t_hi = window
    sub = series.restrict(t_lo, t_hi)
    if len(sub.times) < 5:
        raise ConfigError(f"need >= 5 points in fit window, got {len(sub.times)}")
    if np.any(sub.values <= 0):
        raise ConfigError("power-law fit needs strictly positive values in the window")
    x = np.log(sub.times + t_shift)
    y = np.log(sub.values)
    n = len(x)
    design = np.vstack([x, np.ones(n)]).T
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = y - design @ coef
    sxx = float(np.sum((x - x.mean()) ** 2))
    if n > 2 and sxx > 0:
        se = math.sqrt(float(np.sum(resid**2)) / (n - 2) / sxx)
        ci = float(student_t.ppf(0.975, n - 2)) * se
    else:
        ci = 0.0
    return RateFit(exponent=slope, intercept=intercept, ci_halfwidth=ci,
                   window=(t_lo, t_hi))


def contraction_check(dist: DecaySeries, dissipation: DecaySeries | None = None,
                      mc_mult: float = 2.0, disc_tol: float = 0.0) -> Verdict:
    """Check the two contraction clauses on a recorded pair-distance curve.

    (i)  dist(t) <= min over s < t of dist(s), within mc_mult*(se(s)+se(t));
         this implies the weaker dist(t) <= dist(0) + slack.
    (ii) with the dissipation integrand d_A(t) = ||A(u)-A(u~)||_{L^1} recorded,
         dist(t) - dist(s) + integral_s^t d_A <= disc_tol + MC slack for all
         s < t (cumulative trapezoid integral).  The slack combines the
         endpoint distance errors with the integrated dissipation error, a
         conservative bound for the variance of the combined statistic.

    The verdict carries per-clause flags in ``details``; ``passed`` is their
    conjunction.
    """
    v = Verdict(name="contraction", passed=True)
    mean, se, times = dist.values, dist.stderr, dist.times
    monotone_ok = True
    best_val, best_se = mean[0], se[0]
    for k in range(1, len(times)):
        slack = mc_mult * (se[k] + best_se)
        if mean[k] > best_val + slack:
            monotone_ok = False
            v.violations.append((float(times[k]), float(mean[k] - best_val - slack)))
        if mean[k] < best_val:
            best_val, best_se = mean[k], se[k]
    run_min = np.minimum.accumulate(mean)
    v.details["max_rise"] = float(np.max(mean[1:] - run_min[:-1])) if len(times) > 1 else 0.0
    v.details["monotone"] = monotone_ok

    dissipation_ok = True
    if dissipation is not None:
        if len(dissipation.times) != len(times) or np.any(dissipation.times != times):
            raise ConfigError("distance and dissipation series must share the time grid")
        dt_steps = np.diff(times)
        integral = np.concatenate([[0.0], np.cumsum(
            0.5 * (dissipation.values[1:] + dissipation.values[:-1]) * dt_steps)])
        integral_se = np.concatenate([[0.0], np.cumsum(
            0.5 * (dissipation.stderr[1:] + dissipation.stderr[:-1]) * dt_steps)])
        c = mean + integral
        # minimize over s of the allowed reference level
        running = c[0] + mc_mult * (se[0] - integral_se[0])
        worst = -np.inf
        for k in range(1, len(times)):
            excess = c[k] - mc_mult * (se[k] + integral_se[k]) - running - disc_tol
            worst = max(worst, excess + disc_tol)
            if excess > 0:
                dissipation_ok = False
                v.violations.append((float(times[k]), float(excess)))
            running = min(running, c[k] + mc_mult * (se[k] - integral_se[k]))
        v.details["max_dissipation_excess"] = float(worst)
    v.details["dissipation"] = dissipation_ok
    v.passed = monotone_ok and dissipation_ok
    return v


def theoretical_envelope(t, h0: float, coeff: float, m: float):
    """Closed-form solution of  h' = -coeff * h^m,  h(0) = h0  (h0, coeff > 0, m > 1)."""
    if h0 <= 0 or coeff <= 0 or m <= 1:
        raise ConfigError("envelope needs h0 > 0, coeff > 0, m > 1")
    t = np.asarray(t, dtype=np.float64)
    return (h0 ** (-(m - 1.0)) + coeff * (m - 1.0) * t) ** (-1.0 / (m - 1.0))


def ode_comparison(f_series: DecaySeries, coeff: float, m: float,
                   slack: float = 0.0, mc_mult: float = 2.0) -> Verdict:
    """Domination of a sampled curve by the decay envelope anchored at its first point.

    Checks f(t_k) <= envelope(t_k - t_0; f(t_0), coeff, m) + slack + MC term.
    A curve that satisfies the integral dissipation inequality with the given
    coefficient must pass; equality holds for the envelope itself.
    """
    if np.any(f_series.values <= 0):
        raise ConfigError("comparison needs a strictly positive curve")
    t0 = f_series.times[0]
    h0 = float(f_series.values[0])
    env = theoretical_envelope(f_series.times - t0, h0, coeff, m)
    v = Verdict(name="ode_comparison", passed=True,
                details={"coeff": coeff, "h0": h0, "t0": float(t0)})
    margin = f_series.values - env - slack - mc_mult * f_series.stderr
    roundoff = 64.0 * np.finfo(float).eps * h0
    for k in np.nonzero(margin > roundoff)[0]:
        v.passed = False
        v.violations.append((float(f_series.times[k]), float(margin[k])))
    v.details["max_margin"] = float(np.max(margin))
    return v


def coming_down_statistic(norm_series: DecaySeries, m: float) -> float:
    """sup over recorded times of (t /\\ 1)^{(m+1)/(m-1)} * E||u(t)||^{m+1}."""
    weight = np.minimum(norm_series.times, 1.0) ** ((m + 1.0) / (m - 1.0))
    return float(np.max(weight * norm_series.values))


def mixing_gap(stats_a: EnsembleStats, stats_b: EnsembleStats, functional_id: str,
               member_a: int = 0, member_b: int = 0) -> DecaySeries:
    """|E F(u_a) - E F(u_b)|(t) with combined standard error.

    ``functional_id`` selects a recorded 1-Lipschitz functional: ``fmin`` is
    the clipped norm min(||u||_{L^1_w}, c) and ``ftrunc`` is ||u /\\ c||_{L^1_w}.
    For a coupled pair pass the same stats object with member_a=0, member_b=1.
    """
    if functional_id not in ("fmin", "ftrunc"):
        raise ConfigError(f"unknown Lipschitz functional {functional_id!r}")
    if len(stats_a.times) != len(stats_b.times) or np.any(stats_a.times != stats_b.times):
        raise ConfigError("ensembles record different time grids")
    ka = f"member{member_a}.{functional_id}"
    kb = f"member{member_b}.{functional_id}"
    gap = np.abs(stats_a.mean[ka] - stats_b.mean[kb])
    se = np.sqrt(stats_a.stderr[ka] ** 2 + stats_b.stderr[kb] ** 2)
    return DecaySeries(stats_a.times, gap, se)


# ---------------------------------------------------------------------------
# Smooth surrogate for |.| with curvature concentrated in [-delta, delta]

def _bump_tables(n: int = 65537):
    """Normalized smooth bump on (0,1) with cumulative integrals.

    eta~(s) = exp(-1/(1-(2s-1)^2)) / Z with integral 1; peak ~1.657 <= 2.
    Returns (s, eta~, H, G) with H = primitive of eta~, G = primitive of H.
    """
    s = np.linspace(0.0, 1.0, n)
    v = 2.0 * s - 1.0
    inner = np.zeros_like(s)
    mask = np.abs(v) < 1.0
    inner[mask] = np.exp(-1.0 / (1.0 - v[mask] ** 2))
    H = np.concatenate([[0.0], np.cumsum(0.5 * (inner[1:] + inner[:-1]) * np.diff(s))])
    inner /= H[-1]
    H /= H[-1]
    G = np.concatenate([[0.0], np.cumsum(0.5 * (H[1:] + H[:-1]) * np.diff(s))])
    return s, inner, H, G


_ETA_S, _ETA_VAL, _ETA_H, _ETA_G = _bump_tables()
_ETA_G1 = float(_ETA_G[-1])


def eta_delta(delta: float, r):
    """(value, first derivative, second derivative) of the |.|-surrogate.

    eta_delta(0) = eta_delta'(0) = 0; eta_delta''(r) = eta~(|r|/delta)/delta
    vanishes outside [-delta, delta] and is bounded by 2/delta; the value
    satisfies |eta_delta(r) - |r|| <= delta.
    """
    if delta <= 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    r = np.asarray(r, dtype=np.float64)
    s = np.abs(r) / delta
    inside = s < 1.0
    d2 = np.zeros_like(s)
    d2[inside] = np.interp(s[inside], _ETA_S, _ETA_VAL) / delta
    d1 = np.sign(r) * np.where(inside, np.interp(s, _ETA_S, _ETA_H), 1.0)
    val = delta * np.where(inside, np.interp(s, _ETA_S, _ETA_G), _ETA_G1 + (s - 1.0))
    return val, d1, d2


def g_alpha(alpha: float, delta: float, eps: float, lam: float,
            kappa: float, kappa_bar: float) -> float:
    """Aggregated regularization error rate

        delta^{2 kappa} + eps^{2 kappa_bar}/delta + delta/eps
        + delta^{2 alpha}/eps^2 + lam^2/eps^2 + lam/eps.

    Vanishes as eps -> 0 along the schedule delta = eps^{2 nu} with
    nu in (1/min(m,2), kappa_bar) and 4 alpha nu > 2; diverges off-schedule.
    The vanishing schedule needs alpha above 1/2, so the full domain (0, 1)
    is accepted.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if not (0.0 < delta < 1.0 and 0.0 < eps < 1.0):
        raise ConfigError("delta and eps must lie in (0, 1)")
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    return (delta ** (2.0 * kappa) + delta ** (-1.0) * eps ** (2.0 * kappa_bar)
            + delta / eps + delta ** (2.0 * alpha) * eps ** (-2.0)
            + eps ** (-2.0) * lam**2 + eps ** (-1.0) * lam)


def nu_interval(m: float, kappa_bar: float) -> tuple[float, float]:
    """Admissible schedule exponents: nu in (1/min(m,2), kappa_bar)."""
    return (1.0 / min(m, 2.0), kappa_bar)


def schedule_delta(eps: float, nu: float) -> float:
    """The vanishing schedule delta = eps^{2 nu}."""
    return eps ** (2.0 * nu)


def vanishing_alpha(m: float, nu: float) -> float:
    """An exponent alpha < min(1, m/2) with 4 alpha nu > 2, if one exists."""
    lo, hi = 1.0 / (2.0 * nu), min(1.0, m / 2.0)
    if not lo < hi:
        raise ConfigError(f"no admissible alpha for m={m}, nu={nu}")
    return 0.5 * (lo + hi)


def lower_bound_check(u, v, m: float):
    """Degeneracy-matching lower bound of the power nonlinearity.

    Returns (lhs, rhs, ok) with lhs = ||u|^{m-1} u - |v|^{m-1} v|,
    rhs = 2^{-m} |u - v|^m, ok = lhs >= rhs - 1e-12 (elementwise).
    """
    if m < 1:
        raise ConfigError(f"need m >= 1, got m={m}")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lhs = np.abs(np.abs(u) ** (m - 1.0) * u - np.abs(v) ** (m - 1.0) * v)
    rhs = 2.0 ** (-m) * np.abs(u - v) ** m
    return lhs, rhs, lhs >= rhs - 1e-12


# ---------------------------------------------------------------------------
# Entropy residual

class _SmoothBump:
    """exp(-1/(1-s^2)) on |s| < 1 with exact first and second derivatives."""

    def __call__(self, s):
        s = np.asarray(s, dtype=np.float64)
        out = np.zeros_like(s)
        mask = np.abs(s) < 1.0
        out[mask] = np.exp(-1.0 / (1.0 - s[mask] ** 2))
        return out

    def d1(self, s):
        s = np.asarray(s, dtype=np.float64)
        out = np.zeros_like(s)
        mask = np.abs(s) < 1.0
        sm = s[mask]
        q = 1.0 - sm**2
        out[mask] = np.exp(-1.0 / q) * (-2.0 * sm / q**2)
        return out

    def d2(self, s):
        s = np.asarray(s, dtype=np.float64)
        out = np.zeros_like(s)
        mask = np.abs(s) < 1.0
        sm = s[mask]
        q = 1.0 - sm**2
        g = -2.0 * sm / q**2
        gp = (-2.0 * q - 8.0 * sm**2) / q**3
        out[mask] = np.exp(-1.0 / q) * (g**2 + gp)
        return out


_BUMP = _SmoothBump()


@dataclass
class TestFunction:
    """Separable test function phi(t) rho(x): smooth, nonnegative, compactly supported."""

    name: str
    t_support: float
    x_center: float
    x_halfwidth: float

    def phi(self, t):
        return _BUMP(np.asarray(t) / self.t_support)

    def phi_t(self, t):
        return _BUMP.d1(np.asarray(t) / self.t_support) / self.t_support

    def rho(self, x):
        return _BUMP((np.asarray(x) - self.x_center) / self.x_halfwidth)

    def rho_xx(self, x):
        return _BUMP.d2((np.asarray(x) - self.x_center) / self.x_halfwidth) / self.x_halfwidth**2


def make_test_function(testfn_id: str, grid: Grid1D, t_end: float) -> TestFunction:
    """Built-in admissible test functions; support strictly inside Q x [0, t_end)."""
    mid = 0.5 * (grid.a + grid.b)
    width = grid.length
    builders = {
        "bump": TestFunction("bump", 0.8 * t_end, mid, 0.4 * width),
        "bump_left": TestFunction("bump_left", 0.8 * t_end, grid.a + 0.35 * width, 0.25 * width),
        "bump_early": TestFunction("bump_early", 0.5 * t_end, mid, 0.4 * width),
    }
    if testfn_id not in builders:
        raise ConfigError(f"unknown test function {testfn_id!r}")
    return builders[testfn_id]


def _eta_weighted_diffusivity_primitive(nl: Nonlinearity, delta: float, level: float,
                                        values: NDArray) -> NDArray:
    """[eta' a^2](r) = integral_0^r eta'(z - level) A'(z) dz on the given values.

    Dense cumulative quadrature on one table spanning the data range; the
    resolution is tied to delta so the curvature region is well resolved.
    """
    lo = min(float(values.min()), 0.0, level - 2 * delta)
    hi = max(float(values.max()), 0.0, level + 2 * delta)
    span = max(hi - lo, 1e-12)
    n = int(min(max(4096, 64 * span / delta), 2_000_001))
    z = np.linspace(lo, hi, n)
    _, d1, _ = eta_delta(delta, z - level)
    integrand = d1 * nl.A_prime(z)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(z))])
    anchor = np.interp(0.0, z, cum)
    return np.interp(values, z, cum) - anchor


def entropy_residual(runs, member: int, nl: Nonlinearity, nm: NoiseModel,
                     delta: float, level_a: float = 0.0,
                     testfn_id: str = "bump") -> tuple[float, float]:
    """Discrete defect of the entropy inequality for eta = eta_delta(. - a).

    Positive part of the inequality minus the negative part, so a valid
    entropy solution yields a mean >= -tolerance(h, dt, delta).  Time
    integrals are left Riemann sums (matching the Ito convention), space
    integrals interior nodal sums, and the stochastic integral pairs the
    recorded increments with the pre-step states.  Returns (mean, stderr)
    over the supplied runs (stderr 0 for a single run).

    Each run must have been recorded densely: ``record_every = 1`` and
    ``store_states = True``.
    """
    if delta <= 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    run_list: list[CoupledRecords] = runs if isinstance(runs, (list, tuple)) else [runs]
    residuals = [_entropy_residual_single(r, member, nl, nm, delta, level_a, testfn_id)
                 for r in run_list]
    n = len(residuals)
    mean = float(np.mean(residuals))
    se = float(np.std(residuals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def _entropy_residual_single(records: CoupledRecords, member: int, nl: Nonlinearity,
                             nm: NoiseModel, delta: float, level: float,
                             testfn_id: str) -> float:
    if records.states is None:
        raise ConfigError("entropy residual needs store_states=True")
    if records.config.record_every != 1:
        raise ConfigError("entropy residual needs record_every=1")
    grid = records.grid
    h, dt = grid.h, records.config.dt
    x = grid.nodes
    times = records.times
    states = records.states[:, member, :]          # (n_rec, N) incl. t=0
    n_steps = len(times) - 1
    tf = make_test_function(testfn_id, grid, float(times[-1]))

    phi = tf.phi(times)                            # (n_rec,)
    phi_t = tf.phi_t(times)
    rho = tf.rho(x)                                # (N,)
    rho_xx = tf.rho_xx(x)

    eta_vals, eta_d1, eta_d2 = eta_delta(delta, states - level)

    # Left Riemann sums over [0, T): weights on indices 0..n_steps-1.
    lhs = -np.sum(phi_t[:-1, None] * rho[None, :] * eta_vals[:-1]) * h * dt

    t_init = np.sum(eta_delta(delta, states[0] - level)[0] * phi[0] * rho) * h

    primitive = _eta_weighted_diffusivity_primitive(
        nl, delta, level, states[:-1].ravel()).reshape(n_steps, -1)
    t_diff = np.sum(phi[:-1, None] * rho_xx[None, :] * primitive) * h * dt

    xhat = (x - grid.a) / grid.length
    profiles = nm.mode_profiles(xhat)              # (K, N)
    spatial_sq = np.sum(profiles**2, axis=0)       # (N,)
    g = nm.state_factor(states[:-1])
    sigma_sq = spatial_sq[None, :] * g**2
    t_ito = 0.5 * np.sum(phi[:-1, None] * rho[None, :] * eta_d2[:-1] * sigma_sq) * h * dt

    # |grad [a](u)|^2 by edge differences, weights averaged onto edges.
    prim_a = nl.a_primitive(states[:-1])
    padded = np.zeros((n_steps, grid.N + 2))
    padded[:, 1:-1] = prim_a
    edge_grad_sq = ((padded[:, 1:] - padded[:, :-1]) / h) ** 2    # (n_steps, N+1)
    node_weight = phi[:-1, None] * rho[None, :] * eta_d2[:-1]
    wpad = np.zeros((n_steps, grid.N + 2))
    wpad[:, 1:-1] = node_weight
    edge_weight = 0.5 * (wpad[:, 1:] + wpad[:, :-1])
    t_grad = -np.sum(edge_weight * edge_grad_sq) * h * dt

    t_noise = 0.0
    if records.increments is not None and records.increments.size and profiles.shape[0]:
        dW = records.increments                                    # (n_steps, K)
        integrand = phi[:-1, None] * rho[None, :] * eta_d1[:-1] * g  # (n_steps, N)
        per_mode = integrand @ profiles.T * h                      # (n_steps, K)
        t_noise = float(np.sum(per_mode * dW[:, : profiles.shape[0]]))

    rhs = t_init + t_diff + t_ito + t_grad + t_noise
    return float(rhs - lhs)
