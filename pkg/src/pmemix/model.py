"""Diffusion nonlinearity, finite-mode noise coefficient, and assumption validators.

The nonlinearity A drives the degenerate diffusion term; its square-root
derivative a = sqrt(A') controls the degeneracy structure.  Three kinds are
supported:

* ``pure_power``:   A(r) = |r|^{m-1} r,              a(r) = sqrt(m) |r|^{(m-1)/2}
* ``viscosity``:    A(r) = |r|^{m-1} r + r/n         (nondegenerate perturbation)
* ``regularized``:  a_n(r)^2 = a(clamp(r, -n, n))^2 + (2/n)^2, so a_n >= 2/n
  everywhere and |a_n - a| <= 2/n on [-n, n]; A_n is the exact primitive of
  a_n^2, evaluated piecewise in closed form.
* ``linear``:       A(r) = r (sanity mode for cross-checks against the heat
  equation; not a degenerate diffusion).

The noise coefficient has finitely many modes

    sigma_k(x, r) = c k^{-q} sqrt(2) sin(k pi (x-a)/(b-a)) g(r),  k = 1..modes

with the state factor g selected by family.  Validators sample the growth,
Hoelder, and degeneracy inequalities on log-spaced lattices and report the
tightest constants found; a pass is falsification evidence, not a proof.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

from ._errors import ConfigError
from .domain import Grid1D, GridFunction

__all__ = [
    "Nonlinearity", "NoiseModel", "ClauseCheck", "ValidationReport",
    "eval_nonlinearity", "regularize", "validate_assumption_A",
    "eval_sigma", "validate_noise", "noise_distance", "truncate_noise",
]

NONLINEARITY_KINDS = ("pure_power", "viscosity", "regularized", "linear")
NOISE_FAMILIES = ("off", "additive", "linear", "holder", "branching")


@dataclass(frozen=True)
class Nonlinearity:
    """Diffusion nonlinearity with power exponent m > 1 and declared growth constant K."""

    m: float
    kind: str = "pure_power"
    K: float = 2.0
    n: int | None = None  # regularization index for viscosity/regularized kinds

    def __post_init__(self):
        if self.kind not in NONLINEARITY_KINDS:
            raise ConfigError(f"unknown nonlinearity kind {self.kind!r}")
        if self.kind != "linear" and not self.m > 1.0:
            raise ConfigError(f"power exponent must satisfy m > 1, got m={self.m}")
        if self.kind in ("viscosity", "regularized"):
            if self.n is None or self.n < 1:
                raise ConfigError(f"kind {self.kind!r} needs a regularization index n >= 1")

    # All evaluations accept scalars or arrays and return matching shapes.

    def A(self, r):
        """The nonlinearity A(r)."""
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "linear":
            return r + 0.0
        m = self.m
        power = np.abs(r) ** (m - 1.0) * r
        if self.kind == "pure_power":
            return power
        if self.kind == "viscosity":
            return power + r / self.n
        # regularized: primitive of a_n^2, piecewise in closed form
        n = float(self.n)
        rc = np.clip(r, -n, n)
        core = np.abs(rc) ** (m - 1.0) * rc + (4.0 / n**2) * rc
        excess = np.sign(r) * np.maximum(np.abs(r) - n, 0.0)
        return core + excess * (m * n ** (m - 1.0) + 4.0 / n**2)

    def A_prime(self, r):
        """A'(r) = a(r)^2, the (possibly degenerate) diffusivity."""
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "linear":
            return np.ones_like(r)
        m = self.m
        if self.kind == "pure_power":
            return m * np.abs(r) ** (m - 1.0)
        if self.kind == "viscosity":
            return m * np.abs(r) ** (m - 1.0) + 1.0 / self.n
        n = float(self.n)
        return m * np.abs(np.clip(r, -n, n)) ** (m - 1.0) + 4.0 / n**2

    def a(self, r):
        """a(r) = sqrt(A'(r))."""
        return np.sqrt(self.A_prime(r))

    def a_primitive(self, r):
        """[a](r) = integral of a from 0 to r (odd in r).

        Closed form for pure_power and linear; dense-grid quadrature otherwise.
        """
        r = np.asarray(r, dtype=np.float64)
        if self.kind == "pure_power":
            m = self.m
            return (2.0 * np.sqrt(m) / (m + 1.0)) * np.sign(r) * np.abs(r) ** ((m + 1.0) / 2.0)
        if self.kind == "linear":
            return r + 0.0
        return _odd_primitive(self.a, r)


def _odd_primitive(func, r, points_per_unit: int = 4096, min_points: int = 4097):
    """Primitive from 0 of an even integrand, evaluated at (possibly many) points.

    Builds one cumulative-trapezoid table on [0, max|r|] and interpolates; the
    odd extension gives the values at negative arguments.
    """
    r = np.asarray(r, dtype=np.float64)
    rmax = float(np.max(np.abs(r))) if r.size else 1.0
    if rmax == 0.0:
        return np.zeros_like(r)
    npts = max(min_points, int(points_per_unit * rmax) + 1)
    npts = min(npts, 2_000_001)
    s = np.linspace(0.0, rmax, npts)
    vals = func(s)
    table = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(s))])
    return np.sign(r) * np.interp(np.abs(r), s, table)


def eval_nonlinearity(nl: Nonlinearity, r: float) -> tuple[float, float]:
    """(A(r), a(r)) at a single point."""
    return float(nl.A(r)), float(nl.a(r))


def regularize(nl: Nonlinearity, n: int) -> Nonlinearity:
    """Nondegenerate approximation of a pure power nonlinearity.

    The construction a_n^2 = a(clamp(r, -n, n))^2 + (2/n)^2 keeps a_n >= 2/n
    everywhere and |a_n - a| <= 2/n <= 4/n on [-n, n].
    """
    if nl.kind != "pure_power":
        raise ConfigError("only pure_power nonlinearities can be regularized")
    if n < 1:
        raise ConfigError(f"regularization index must be >= 1, got n={n}")
    return replace(nl, kind="regularized", n=int(n))


# ---------------------------------------------------------------------------
# Validation reports

@dataclass
class ClauseCheck:
    """Outcome of one sampled inequality: the smallest constant that would make it pass."""

    name: str
    passed: bool
    tightest: float
    witness: tuple | None = None


@dataclass
class ValidationReport:
    subject: str
    clauses: list[ClauseCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.clauses)

    def clause(self, name: str) -> ClauseCheck:
        for c in self.clauses:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self) -> str:
        lines = [f"validation of {self.subject}: {'PASS' if self.passed else 'FAIL'}"]
        for c in self.clauses:
            lines.append(f"  [{'ok' if c.passed else 'FAIL'}] {c.name}: "
                         f"tightest constant {c.tightest:.6g}"
                         + (f", witness {c.witness}" if c.witness is not None else ""))
        return "\n".join(lines)


def _signed_log_lattice(r_max: float, samples: int) -> NDArray[np.float64]:
    """Log-spaced values of both signs plus zero; dense near the degeneracy at 0."""
    half = max(samples // 2, 8)
    mags = np.geomspace(1e-8 * max(r_max, 1.0), r_max, half)
    return np.unique(np.concatenate([-mags[::-1], [0.0], mags]))


def validate_assumption_A(nl: Nonlinearity, r_max: float = 10.0,
                          samples: int = 400) -> ValidationReport:
    """Sampled check of the structural inequalities required of (A, a, K, m).

    Clauses, each reported with the tightest constant that would satisfy it:

    * ``origin_bound``:       |a(0)| <= K
    * ``derivative_bound``:   |a'(r)| <= K |r|^{(m-3)/2} for r > 0 (finite differences)
    * ``nondegeneracy``:      K a(r) >= 1 for |r| >= 1
    * ``primitive_lower``:    K |[a](r) - [a](s)| >= |r-s| when max(|r|,|s|) >= 1,
      and >= |r-s|^{(m+1)/2} when max(|r|,|s|) < 1.
    """
    if samples < 100:
        raise ConfigError("validator needs at least 100 samples")
    K, m = nl.K, nl.m
    report = ValidationReport(subject=f"nonlinearity kind={nl.kind} m={m} K={K}")

    a0 = float(np.abs(nl.a(0.0)))
    report.clauses.append(ClauseCheck("origin_bound", a0 <= K, a0,
                                      witness=None if a0 <= K else (0.0,)))

    r_pos = np.geomspace(1e-6 * max(r_max, 1.0), r_max, samples)
    dr = 1e-6 * np.maximum(r_pos, 1e-3)
    fd = np.abs((nl.a(r_pos + dr) - nl.a(r_pos - dr)) / (2.0 * dr))
    ratio = fd / np.abs(r_pos) ** ((m - 3.0) / 2.0)
    tight = float(np.max(ratio))
    i = int(np.argmax(ratio))
    report.clauses.append(ClauseCheck("derivative_bound", tight <= K * (1 + 1e-6), tight,
                                      witness=None if tight <= K * (1 + 1e-6) else (float(r_pos[i]),)))

    r_big = np.concatenate([np.geomspace(1.0, r_max, samples),
                            -np.geomspace(1.0, r_max, samples)])
    a_big = nl.a(r_big)
    tight = float(np.max(1.0 / a_big)) if np.all(a_big > 0) else np.inf
    i = int(np.argmin(a_big))
    report.clauses.append(ClauseCheck("nondegeneracy", K * float(np.min(a_big)) >= 1.0, tight,
                                      witness=None if K * float(np.min(a_big)) >= 1.0
                                      else (float(r_big[i]),)))

    lattice = _signed_log_lattice(r_max, min(samples, 240))
    prim = nl.a_primitive(lattice)
    R, S = np.meshgrid(lattice, lattice, indexing="ij")
    P, Q = np.meshgrid(prim, prim, indexing="ij")
    gap = np.abs(R - S)
    mask = gap > 0
    lhs = np.abs(P - Q)
    outer = np.maximum(np.abs(R), np.abs(S)) >= 1.0
    required = np.where(outer, gap, gap ** ((m + 1.0) / 2.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        need = np.where(mask & (lhs > 0), required / lhs, np.where(mask, np.inf, 0.0))
    tight = float(np.max(need))
    idx = np.unravel_index(int(np.argmax(need)), need.shape)
    ok = tight <= K * (1 + 1e-9)
    report.clauses.append(ClauseCheck(
        "primitive_lower", ok, tight,
        witness=None if ok else (float(R[idx]), float(S[idx]))))
    return report


# ---------------------------------------------------------------------------
# Noise model

@dataclass(frozen=True)
class NoiseModel:
    """Finite-mode diffusion coefficient sigma: Q x R -> l2 with assumption metadata.

    ``modes`` sine modes with amplitudes c k^{-q}; the state factor g(r) is
    selected by ``family``.  ``r_clip`` truncates the state argument (used by
    the stability sweep's approximating coefficients).
    """

    family: str = "off"
    modes: int = 0
    amplitude: float = 0.0
    spatial_decay: float = 2.0
    K: float = 1.0
    kappa: float = 0.25
    kappa_bar: float = 1.0
    m: float = 2.0
    r_clip: float | None = None

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ConfigError(f"unknown noise family {self.family!r}")
        if self.family != "off" and self.modes < 1:
            raise ConfigError("active noise needs at least one mode")
        if self.family in ("holder", "branching") and not 0.0 < self.kappa <= 0.5:
            raise ConfigError(f"family {self.family!r} needs kappa in (0, 1/2], got {self.kappa}")
        if self.spatial_decay < 2.0:
            raise ConfigError(f"spatial decay exponent must be >= 2, got {self.spatial_decay}")
        if not 1.0 / min(self.m, 2.0) < self.kappa_bar <= 1.0:
            raise ConfigError(
                f"kappa_bar must lie in (1/min(m,2), 1], got {self.kappa_bar} for m={self.m}")

    def state_factor(self, r):
        """g(r) by family; the clip (if set) is applied to the argument first."""
        r = np.asarray(r, dtype=np.float64)
        if self.r_clip is not None:
            r = np.clip(r, -self.r_clip, self.r_clip)
        if self.family == "off":
            return np.zeros_like(r)
        if self.family == "additive":
            return np.ones_like(r)
        if self.family == "linear":
            return r + 0.0
        if self.family == "holder":
            return np.sign(r) * np.abs(r) ** (0.5 + self.kappa)
        return np.abs(r) ** (0.5 + self.kappa)  # branching

    def mode_profiles(self, xhat) -> NDArray[np.float64]:
        """Spatial mode matrix c k^{-q} sqrt(2) sin(k pi xhat), shape (modes, len(xhat)).

        ``xhat`` is the normalized coordinate (x - a)/(b - a) in [0, 1].
        """
        xhat = np.atleast_1d(np.asarray(xhat, dtype=np.float64))
        if self.family == "off" or self.modes == 0:
            return np.zeros((0, xhat.size))
        k = np.arange(1, self.modes + 1, dtype=np.float64)[:, None]
        return self.amplitude * k ** (-self.spatial_decay) * np.sqrt(2.0) * np.sin(k * np.pi * xhat[None, :])

    def l2_norm(self, xhat, r) -> NDArray[np.float64]:
        """|sigma(x, r)|_{l2} at paired normalized coordinates and states."""
        profiles = self.mode_profiles(xhat)
        spatial_sq = np.sum(profiles**2, axis=0)
        return np.sqrt(spatial_sq) * np.abs(self.state_factor(np.atleast_1d(r)))


def eval_sigma(nm: NoiseModel, grid: Grid1D, u: GridFunction) -> list[GridFunction]:
    """Per-mode coefficient fields sigma_k(x_i, u_i) as grid functions."""
    if nm.family != "off" and nm.modes < 1:
        raise ConfigError("active noise needs at least one mode")
    xhat = (grid.nodes - grid.a) / grid.length
    profiles = nm.mode_profiles(xhat)
    g = nm.state_factor(u.values)
    return [GridFunction(grid, profiles[k] * g) for k in range(profiles.shape[0])]


def truncate_noise(nm: NoiseModel, n: float) -> NoiseModel:
    """Approximating coefficient with the state argument clamped to [-n, n]."""
    return replace(nm, r_clip=float(n))


def validate_noise(nm: NoiseModel, r_max: float = 10.0, samples: int = 200,
                   kappa: float | None = None) -> ValidationReport:
    """Sampled check of the growth and two-argument Hoelder bounds.

    Uses normalized spatial coordinates in [0, 1].  Reports the tightest
    empirical constant per clause; the ``holder`` clause samples pairs with
    |r - s| <= 1 as required by the two-argument bound, including log-spaced
    near-pairs around the origin where the state factor degenerates.
    ``kappa`` overrides the declared state exponent (a mismatch between the
    declared and the actual regularity is exactly what the witness search is
    for).
    """
    if samples < 100:
        raise ConfigError("validator needs at least 100 samples")
    kappa = nm.kappa if kappa is None else kappa
    report = ValidationReport(subject=f"noise family={nm.family} modes={nm.modes}")
    if nm.family == "off":
        report.clauses.append(ClauseCheck("growth", True, 0.0))
        report.clauses.append(ClauseCheck("holder", True, 0.0))
        return report

    xs = np.linspace(0.0, 1.0, 41)
    rs = _signed_log_lattice(r_max, samples)
    spatial = np.sqrt(np.sum(nm.mode_profiles(xs) ** 2, axis=0))
    norms = spatial[:, None] * np.abs(nm.state_factor(rs))[None, :]
    ratio = norms / (1.0 + np.abs(rs)[None, :])
    tight_growth = float(np.max(ratio))
    ok = tight_growth <= nm.K * (1 + 1e-9)
    idx = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    report.clauses.append(ClauseCheck("growth", ok, tight_growth,
                                      witness=None if ok else (float(xs[idx[0]]), float(rs[idx[1]]))))

    # Hoelder clause on pairs with |r-s| <= 1: log-spaced near-pairs around the
    # degeneracy at r = 0, plus random mixed (x, y, r, s) samples.
    rng = np.random.default_rng(1234)
    base = _signed_log_lattice(min(r_max, 2.0), max(40, samples // 8))
    deltas = np.concatenate([np.geomspace(1e-8, 1.0, 25), -np.geomspace(1e-8, 1.0, 25)])
    r_near = np.repeat(base, deltas.size)
    s_near = r_near + np.tile(deltas, base.size)
    x_near = np.full(r_near.size, 0.5)
    y_near = x_near

    r_rand = np.concatenate([rs, rng.uniform(-r_max, r_max, samples)])
    s_rand = np.clip(r_rand + rng.uniform(-1.0, 1.0, r_rand.size), -r_max - 1, r_max + 1)
    x_rand = rng.uniform(0.0, 1.0, r_rand.size)
    y_rand = np.clip(x_rand + rng.uniform(-0.5, 0.5, r_rand.size), 0.0, 1.0)

    r = np.concatenate([r_near, r_rand])
    s = np.concatenate([s_near, s_rand])
    x = np.concatenate([x_near, x_rand])
    y = np.concatenate([y_near, y_rand])
    px, py = nm.mode_profiles(x), nm.mode_profiles(y)
    gr, gs = nm.state_factor(r), nm.state_factor(s)
    diff = np.sqrt(np.sum((px * gr[None, :] - py * gs[None, :]) ** 2, axis=0))
    denom = np.abs(r - s) ** (0.5 + kappa) + (1.0 + np.abs(r)) * np.abs(x - y) ** nm.kappa_bar
    mask = denom > 0
    ratio = np.where(mask, diff / np.where(mask, denom, 1.0), 0.0)
    tight_holder = float(np.max(ratio))
    ok = tight_holder <= nm.K * (1 + 1e-9)
    i = int(np.argmax(ratio))
    report.clauses.append(ClauseCheck("holder", ok, tight_holder,
                                      witness=None if ok else (float(x[i]), float(y[i]),
                                                               float(r[i]), float(s[i]))))
    return report


def noise_distance(nm1: NoiseModel, nm2: NoiseModel, grid: Grid1D,
                   r_max: float = 50.0, samples: int = 400) -> float:
    """Lattice supremum of |sigma - sigma~|_{l2}^2 / (1 + |r|)^{m+1}.

    A lower bound for the true supremum; the lattice is log-spaced in r and
    uses the grid nodes in x.
    """
    if nm1.m != nm2.m:
        raise ConfigError("noise distance needs matching power exponent m")
    xhat = (grid.nodes - grid.a) / grid.length
    rs = _signed_log_lattice(r_max, samples)
    p1, p2 = nm1.mode_profiles(xhat), nm2.mode_profiles(xhat)
    g1, g2 = nm1.state_factor(rs), nm2.state_factor(rs)
    kmax = max(p1.shape[0], p2.shape[0])
    if p1.shape[0] < kmax:
        p1 = np.vstack([p1, np.zeros((kmax - p1.shape[0], xhat.size))])
    if p2.shape[0] < kmax:
        p2 = np.vstack([p2, np.zeros((kmax - p2.shape[0], xhat.size))])
    # |sigma1 - sigma2|^2 at (x_i, r_j): sum_k (p1[k,i] g1[j] - p2[k,i] g2[j])^2
    diff = p1[:, :, None] * g1[None, None, :] - p2[:, :, None] * g2[None, None, :]
    diff_sq = np.sum(diff * diff, axis=0)
    ratio = diff_sq / (1.0 + np.abs(rs))[None, :] ** (nm1.m + 1.0)
    return float(np.max(ratio))
