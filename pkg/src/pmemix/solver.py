"""Time integration of the stochastic porous medium equation and its semilinear variant.

The default scheme is a linearized semi-implicit step: with D an upper bound
for the diffusivity A'(u) over the current states,

    (I - dt D L_h) u* = u^n + dt [ L_h A(u^n) - D L_h u^n ],
    u^{n+1} = u* + sum_k sigma_k(x, u^n) dW_k,

where L_h is the three-point Laplacian with zero Dirichlet ghosts.  The noise
coefficient is evaluated at the pre-step state (Euler-Maruyama / Ito).  The
stabilizer D is shared by all members of a coupled run; this keeps the scheme
order-preserving for ordered deterministic data and lets one banded solve
advance every member.

Coupled runs advance several trajectories with the *same* Gaussian increments
at every step.  Increments come from a counter-based stream keyed by
(seed, step, mode): regeneration with the same key is bit-exact and the
results cannot depend on scheduling or thread count.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.random import Philox
from numpy.typing import NDArray
from scipy.fft import dst
from scipy.linalg import solveh_banded
from scipy.special import ndtri

from ._errors import BlowUpError, ConfigError, EnsembleRejectedError
from .domain import Grid1D, GridFunction, Weight, laplacian_values, solve_weight
from .model import NoiseModel, Nonlinearity

__all__ = [
    "SolverConfig", "NoiseIncrements", "CoupledRecords", "EnsembleStats",
    "step_fd", "step_galerkin", "step_semilinear",
    "run_coupled", "run_ensemble", "clamp_initial_condition",
]

SCHEMES = ("fd_semi_implicit", "fd_explicit", "galerkin")
EQUATIONS = ("porous_medium", "semilinear")
DRIFTS = ("zero", "cubic_dissipative")


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping parameters; record times are exact multiples of dt."""

    dt: float
    t_end: float
    scheme: str = "fd_semi_implicit"
    galerkin_modes: int | None = None
    cfl_safety: float = 0.9
    record_every: int = 1
    equation: str = "porous_medium"
    drift: str = "zero"
    seed: int = 0
    clip_c: float = 1.0
    blowup_threshold: float = 1e8
    store_states: bool = False

    def __post_init__(self):
        if self.dt <= 0 or self.t_end <= 0 or self.dt > self.t_end:
            raise ConfigError(f"need 0 < dt <= t_end, got dt={self.dt}, t_end={self.t_end}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.equation not in EQUATIONS:
            raise ConfigError(f"unknown equation {self.equation!r}")
        if self.drift not in DRIFTS:
            raise ConfigError(f"unknown drift {self.drift!r}")
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ConfigError(f"cfl_safety must lie in (0, 1], got {self.cfl_safety}")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


class NoiseIncrements:
    """Counter-based Gaussian increments of variance dt, keyed by (seed, step, mode).

    Mode k of step n consumes exactly the k-th 64-bit word of the Philox
    counter block ``step << 128`` under key ``seed``; the word is mapped
    through the inverse normal CDF.  Identical keys therefore reproduce
    identical increments bit-exactly, independent of execution order.
    """

    def __init__(self, seed: int, n_modes: int, dt: float):
        self.seed = int(seed)
        self.n_modes = int(n_modes)
        self.dt = float(dt)
        self._scale = math.sqrt(dt)
        self._bg = Philox(key=self.seed)
        template = self._bg.state
        template["state"]["counter"] = np.zeros(4, dtype=np.uint64)
        template["buffer_pos"] = 4  # force a fresh block at the set counter
        self._template = template
        self._counter = template["state"]["counter"]

    def for_step(self, step: int) -> NDArray[np.float64]:
        """Increments dW_k for one step, shape (n_modes,)."""
        if self.n_modes == 0:
            return np.zeros(0)
        # counter block (0, 0, step, 0): word k of the block belongs to mode k
        self._counter[0] = 0
        self._counter[1] = 0
        self._counter[2] = np.uint64(step & 0xFFFFFFFFFFFFFFFF)
        self._counter[3] = np.uint64(step >> 64)
        self._bg.state = self._template
        words = self._bg.random_raw(self.n_modes)
        uniforms = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
        return ndtri(uniforms) * self._scale


def _as_member_list(obj, n_members: int, what: str) -> list:
    if isinstance(obj, (list, tuple)):
        if len(obj) != n_members:
            raise ConfigError(f"got {len(obj)} {what} for {n_members} members")
        return list(obj)
    return [obj] * n_members


def _sine_eigenvalues(grid: Grid1D) -> NDArray[np.float64]:
    """Eigenvalues of the discrete Laplacian on the discrete sine basis."""
    k = np.arange(1, grid.N + 1, dtype=np.float64)
    return -(4.0 / grid.h**2) * np.sin(k * np.pi / (2.0 * (grid.N + 1))) ** 2


class _Stepper:
    """Advances an (n_members, N) state block; all members share the increments."""

    def __init__(self, grid: Grid1D, config: SolverConfig,
                 nls: list[Nonlinearity], nms: list[NoiseModel]):
        self.grid = grid
        self.config = config
        self.nls = nls
        self.nms = nms
        self.h = grid.h
        self.shared_nl = all(nl is nls[0] for nl in nls)
        self.shared_nm = all(nm is nms[0] for nm in nms)
        xhat = (grid.nodes - grid.a) / grid.length
        self.profiles = [nm.mode_profiles(xhat) for nm in nms]
        self.n_modes = max((p.shape[0] for p in self.profiles), default=0)
        self.any_noise = any(nm.family != "off" for nm in nms)
        if config.scheme == "galerkin":
            L = config.galerkin_modes if config.galerkin_modes else grid.N
            if not 1 <= L <= grid.N:
                raise ConfigError(f"galerkin_modes must lie in [1, N], got {L}")
            self.L = L
            self.eigs = _sine_eigenvalues(grid)

    def _check_finite(self, U: NDArray, step: int) -> None:
        amax = np.max(np.abs(U))
        if not np.isfinite(amax) or amax > self.config.blowup_threshold:
            member = int(np.argmax(np.max(np.abs(U), axis=1)))
            raise BlowUpError(
                f"member {member} blew up at step {step} (t={step * self.config.dt:.6g})",
                member=member, step=step, time=step * self.config.dt)

    def _noise_term(self, U: NDArray, dW: NDArray) -> NDArray:
        if self.shared_nm:
            prof = self.profiles[0]
            return self.nms[0].state_factor(U) * (dW[: prof.shape[0]] @ prof)
        add = np.zeros_like(U)
        for i, (nm, prof) in enumerate(zip(self.nms, self.profiles)):
            if nm.family == "off" or prof.shape[0] == 0:
                continue
            add[i] = nm.state_factor(U[i]) * (dW[: prof.shape[0]] @ prof)
        return add

    def _implicit_solve(self, rhs: NDArray, alpha: float) -> NDArray:
        """(I - alpha * second-difference) x = rhs along the last axis, SPD banded."""
        N = rhs.shape[-1]
        ab = np.zeros((2, N))
        ab[0, 1:] = -alpha
        ab[1, :] = 1.0 + 2.0 * alpha
        return solveh_banded(ab, rhs.T, check_finite=False).T

    def _A_block(self, U: NDArray) -> NDArray:
        if self.shared_nl:
            return self.nls[0].A(U)
        return np.stack([nl.A(U[i]) for i, nl in enumerate(self.nls)])

    def _stabilizer(self, U: NDArray) -> float:
        if self.shared_nl:
            return float(self.nls[0].A_prime(U).max())
        return max(float(np.max(nl.A_prime(U[i]))) for i, nl in enumerate(self.nls))

    def step_porous_fd(self, U: NDArray, dW: NDArray, step: int) -> NDArray:
        cfg = self.config
        dt, h = cfg.dt, self.h
        D = self._stabilizer(U)
        if cfg.scheme == "fd_explicit":
            n_sub = max(1, math.ceil(dt * (2.0 * D + 1e-12) / (cfg.cfl_safety * h * h)))
            V = U
            for _ in range(n_sub):
                V = V + (dt / n_sub) * laplacian_values(self._A_block(V), h)
            Ustar = V
        else:
            rhs = U + dt * laplacian_values(self._A_block(U) - D * U, h)
            Ustar = self._implicit_solve(rhs, dt * D / (h * h))
        out = Ustar + self._noise_term(U, dW) if self.any_noise else Ustar
        self._check_finite(out, step)
        return out

    def step_semilinear(self, U: NDArray, dW: NDArray, step: int) -> NDArray:
        cfg = self.config
        drift = -U**3 if cfg.drift == "cubic_dissipative" else 0.0
        rhs = U + cfg.dt * drift
        Ustar = self._implicit_solve(rhs, cfg.dt / (self.h * self.h))
        out = Ustar + self._noise_term(U, dW) if self.any_noise else Ustar
        self._check_finite(out, step)
        return out

    # Galerkin: the state block holds coefficients on the first L sine modes.

    def to_coeffs(self, U: NDArray) -> NDArray:
        return dst(U, type=1, norm="ortho", axis=-1)[..., : self.L]

    def to_nodal(self, C: NDArray) -> NDArray:
        padded = np.zeros(C.shape[:-1] + (self.grid.N,))
        padded[..., : self.L] = C
        return dst(padded, type=1, norm="ortho", axis=-1)

    def step_porous_galerkin(self, C: NDArray, dW: NDArray, step: int) -> NDArray:
        dt = self.config.dt
        lam = self.eigs[: self.L]
        U = self.to_nodal(C)
        Au = self._A_block(U)
        D = self._stabilizer(U)
        Ahat = dst(Au, type=1, norm="ortho", axis=-1)[..., : self.L]
        Cstar = (C + dt * lam * (Ahat - D * C)) / (1.0 - dt * D * lam)
        if self.any_noise:
            Cstar = Cstar + self.to_coeffs(self._noise_term(U, dW))
        self._check_finite(self.to_nodal(Cstar), step)
        return Cstar


# ---------------------------------------------------------------------------
# Public single-state step operations

def _single_step(state: GridFunction, nl: Nonlinearity, nm: NoiseModel,
                 dt: float, dW, config: SolverConfig) -> GridFunction:
    stepper = _Stepper(state.grid, config, [nl], [nm])
    dW = np.zeros(stepper.n_modes) if dW is None else np.asarray(dW, dtype=np.float64)
    U = state.values[None, :]
    if config.equation == "semilinear":
        out = stepper.step_semilinear(U, dW, 1)
    else:
        out = stepper.step_porous_fd(U, dW, 1)
    return GridFunction(state.grid, out[0])


def step_fd(state: GridFunction, nl: Nonlinearity, nm: NoiseModel,
            dt: float, dW=None, scheme: str = "fd_semi_implicit") -> GridFunction:
    """One finite-difference step of the porous medium dynamics."""
    cfg = SolverConfig(dt=dt, t_end=dt, scheme=scheme)
    return _single_step(state, nl, nm, dt, dW, cfg)


def step_semilinear(state: GridFunction, drift_id: str, nm: NoiseModel,
                    dt: float, dW=None) -> GridFunction:
    """One semi-implicit step of  du = (Lu + f(u)) dt + noise."""
    cfg = SolverConfig(dt=dt, t_end=dt, equation="semilinear", drift=drift_id)
    nl = Nonlinearity(m=2.0)  # unused by the semilinear step
    return _single_step(state, nl, nm, dt, dW, cfg)


def step_galerkin(coeffs: NDArray, grid: Grid1D, nl: Nonlinearity, nm: NoiseModel,
                  dt: float, dW=None, modes: int | None = None) -> NDArray:
    """One pseudo-spectral step on sine-mode coefficients; returns new coefficients."""
    L = modes if modes is not None else len(coeffs)
    cfg = SolverConfig(dt=dt, t_end=dt, scheme="galerkin", galerkin_modes=L)
    stepper = _Stepper(grid, cfg, [nl], [nm])
    dW = np.zeros(stepper.n_modes) if dW is None else np.asarray(dW, dtype=np.float64)
    C = np.zeros((1, L))
    kept = min(L, len(coeffs))
    C[0, :kept] = coeffs[:kept]
    return stepper.step_porous_galerkin(C, dW, 1)[0]


# ---------------------------------------------------------------------------
# Coupled runs and ensembles

@dataclass
class CoupledRecords:
    """Recorded functionals of a coupled run; all members share the noise path."""

    grid: Grid1D
    config: SolverConfig
    n_members: int
    times: NDArray[np.float64]
    series: dict[str, NDArray[np.float64]]
    blown_up: bool = False
    blowup_info: str | None = None
    states: NDArray[np.float64] | None = None      # (n_records, n_members, N)
    increments: NDArray[np.float64] | None = None  # (n_steps, n_modes)

    def pair_key(self, i: int, j: int, name: str) -> str:
        return f"pair{i}-{j}.{name}"

    def member_key(self, i: int, name: str) -> str:
        return f"member{i}.{name}"


def clamp_initial_condition(ic: GridFunction, n: float) -> GridFunction:
    """Truncation of the initial condition to [-n, n] (stability-sweep preprocessor)."""
    return GridFunction(ic.grid, np.clip(ic.values, -n, n))


def _record_keys(n_members: int) -> list[str]:
    keys = []
    for i in range(n_members):
        keys += [f"member{i}.{name}" for name in ("lmp1", "lmp1_pow", "w1", "fmin", "ftrunc")]
    for i in range(n_members):
        for j in range(i + 1, n_members):
            keys += [f"pair{i}-{j}.w1dist", f"pair{i}-{j}.adist"]
    return keys


def _record_row(U: NDArray, weight: Weight, h: float, m: float, clip_c: float,
                nls: list[Nonlinearity]) -> dict[str, float]:
    w = weight.values
    row = {}
    n_members = U.shape[0]
    for i in range(n_members):
        lmp1_pow = float(np.sum(np.abs(U[i]) ** (m + 1.0)) * h)
        w1 = float(np.sum(np.abs(U[i]) * w) * h)
        row[f"member{i}.lmp1"] = lmp1_pow ** (1.0 / (m + 1.0))
        row[f"member{i}.lmp1_pow"] = lmp1_pow
        row[f"member{i}.w1"] = w1
        row[f"member{i}.fmin"] = min(w1, clip_c)
        row[f"member{i}.ftrunc"] = float(np.sum(np.abs(np.minimum(U[i], clip_c)) * w) * h)
    for i in range(n_members):
        for j in range(i + 1, n_members):
            row[f"pair{i}-{j}.w1dist"] = float(np.sum(np.abs(U[i] - U[j]) * w) * h)
            Ai, Aj = nls[i].A(U[i]), nls[j].A(U[j])
            row[f"pair{i}-{j}.adist"] = float(np.sum(np.abs(Ai - Aj)) * h)
    return row


def run_coupled(config: SolverConfig, nl, nm, ics: list[GridFunction],
                seed: int | None = None) -> CoupledRecords:
    """Advance all members with shared Gaussian increments and record functionals.

    ``nl`` and ``nm`` may be single objects or per-member lists (the stability
    sweep pairs an approximating model with a reference model).  A blow-up in
    any member stops the run; the partial records are returned flagged.
    """
    if len(ics) < 1:
        raise ConfigError("need at least one initial condition")
    grid = ics[0].grid
    for ic in ics[1:]:
        if ic.grid != grid:
            raise ConfigError("initial conditions live on different grids")
    n_members = len(ics)
    nls = _as_member_list(nl, n_members, "nonlinearities")
    nms = _as_member_list(nm, n_members, "noise models")
    seed = config.seed if seed is None else seed

    stepper = _Stepper(grid, config, nls, nms)
    noise = NoiseIncrements(seed, stepper.n_modes, config.dt)
    weight = solve_weight(grid)
    m = nls[0].m
    galerkin = config.scheme == "galerkin"

    U = np.stack([ic.values for ic in ics])
    state_block = stepper.to_coeffs(U) if galerkin else U

    times = [0.0]
    rows = [_record_row(U, weight, grid.h, m, config.clip_c, nls)]
    stored = [U.copy()] if config.store_states else None
    increments = [] if config.store_states else None
    blown_up, blowup_info = False, None

    n_steps = config.n_steps
    for step in range(1, n_steps + 1):
        dW = noise.for_step(step) if stepper.any_noise else np.zeros(stepper.n_modes)
        if increments is not None:
            increments.append(dW)
        try:
            if config.equation == "semilinear":
                state_block = stepper.step_semilinear(state_block, dW, step)
            elif galerkin:
                state_block = stepper.step_porous_galerkin(state_block, dW, step)
            else:
                state_block = stepper.step_porous_fd(state_block, dW, step)
        except BlowUpError as err:
            blown_up, blowup_info = True, str(err)
            break
        if step % config.record_every == 0:
            U = stepper.to_nodal(state_block) if galerkin else state_block
            times.append(step * config.dt)
            rows.append(_record_row(U, weight, grid.h, m, config.clip_c, nls))
            if stored is not None:
                stored.append(U.copy())

    series = {key: np.array([row[key] for row in rows]) for key in _record_keys(n_members)}
    return CoupledRecords(
        grid=grid, config=config, n_members=n_members,
        times=np.array(times), series=series,
        blown_up=blown_up, blowup_info=blowup_info,
        states=np.stack(stored) if stored else None,
        increments=np.array(increments) if increments is not None and increments else None,
    )


@dataclass
class EnsembleStats:
    """Per-time mean and standard error of every recorded functional over a seed ensemble."""

    times: NDArray[np.float64]
    mean: dict[str, NDArray[np.float64]]
    stderr: dict[str, NDArray[np.float64]]
    n_members: int
    n_runs: int
    n_blowups: int
    config: SolverConfig | None = None

    def keys(self) -> list[str]:
        return list(self.mean.keys())


def run_ensemble(config: SolverConfig, nl, nm, ics: list[GridFunction], M: int,
                 base_seed: int | None = None, threads: int = 1) -> EnsembleStats:
    """M independent coupled runs with seeds base_seed + j, aggregated pointwise.

    Blown-up members are excluded with a count; the ensemble is rejected when
    more than 10% of the runs blow up.  ``threads`` sets the number of worker
    processes; results depend only on (config, seeds), never on the worker
    count, because runs are reduced in seed order.
    """
    if M < 2:
        raise ConfigError(f"ensemble needs M >= 2 runs, got M={M}")
    base_seed = config.seed if base_seed is None else base_seed

    worker = functools.partial(run_coupled, config, nl, nm, ics)
    seeds = [base_seed + j for j in range(M)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(worker, seeds, chunksize=max(1, M // (4 * threads))))
    else:
        records = [worker(seed) for seed in seeds]

    good = [r for r in records if not r.blown_up]
    n_blowups = M - len(good)
    if n_blowups > 0.1 * M:
        raise EnsembleRejectedError(
            f"{n_blowups}/{M} ensemble members blew up", n_blowups=n_blowups, n_total=M)

    times = good[0].times
    mean, stderr = {}, {}
    n = len(good)
    for key in good[0].series:
        stacked = np.stack([r.series[key] for r in good])
        mean[key] = stacked.mean(axis=0)
        stderr[key] = (stacked.std(axis=0, ddof=1) / math.sqrt(n)
                       if n > 1 else np.zeros(stacked.shape[1]))
    return EnsembleStats(times=times, mean=mean, stderr=stderr,
                         n_members=good[0].n_members, n_runs=n,
                         n_blowups=n_blowups, config=config)
