"""Experiment orchestration and bit-stable result emission.

Each subcommand maps to one experiment.  A flat key-value config file with
dotted sections selects the model and discretization; unknown keys are
errors.  Every output file carries the config hash of the run that produced
it, and results depend only on (config, seed), never on the thread count.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from ._errors import BlowUpError, ConfigError, EnsembleRejectedError
from .analysis import (DecaySeries, contraction_check, coming_down_statistic,
                       eta_delta, fit_power_exponent, g_alpha, lower_bound_check,
                       mixing_gap, nu_interval, ode_comparison, schedule_delta,
                       series_from_stats, theoretical_envelope, vanishing_alpha)
from .domain import build_grid, bump_profile, sine_profile, solve_weight, \
    discrete_laplacian, GridFunction
from .exactsol import separable_solution, solve_profile
from .model import (NoiseModel, Nonlinearity, regularize,
                    truncate_noise, validate_assumption_A, validate_noise)
from .solver import (SolverConfig, clamp_initial_condition, run_coupled,
                     run_ensemble)

EXPERIMENTS = ("weight", "validate", "simulate", "contract", "comedown",
               "selfsim", "mix", "stability", "lemmas")


def _parse_int_list(text: str) -> list[int]:
    return [int(part.strip()) for part in text.split(",") if part.strip()]


def _parse_str_set(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


# key -> (converter, global default)
KEY_TABLE: dict[str, tuple] = {
    "domain.a": (float, 0.0),
    "domain.b": (float, 1.0),
    "domain.N": (int, 200),
    "model.m": (float, 2.0),
    "model.kind": (str, "pure_power"),
    "model.K": (float, 2.0),
    "noise.family": (str, "linear"),
    "noise.modes": (int, 4),
    "noise.amplitude": (float, 0.5),
    "noise.decay": (float, 2.0),
    "noise.kappa": (float, 0.25),
    "noise.kappa_bar": (float, 1.0),
    "noise.K": (float, 6.0),
    "ic.kind": (str, "bump"),
    "ic.amplitude": (float, 2.0),
    "ic.amplitude2": (float, -2.0),
    "ic.members": (int, 2),
    "ic.center": (float, 0.5),
    "ic.width": (float, 0.4),
    "ic.mode": (int, 1),
    "solver.scheme": (str, "fd_semi_implicit"),
    "solver.dt": (float, 2e-4),
    "solver.t_end": (float, 4.0),
    "solver.cfl_safety": (float, 0.9),
    "solver.record_every": (int, 50),
    "solver.galerkin_modes": (int, 0),
    "solver.equation": (str, "porous_medium"),
    "solver.drift": (str, "zero"),
    "ensemble.size": (int, 64),
    "ensemble.base_seed": (int, 1000),
    "analysis.fit_lo": (float, 0.5),
    "analysis.fit_hi": (float, 4.0),
    "analysis.clip_c": (float, 1.0),
    "analysis.delta": (float, 0.1),
    "analysis.envelope_margin": (float, 1.5),
    "analysis.disc_tol_mult": (float, 3.0),
    "stability.n_values": (_parse_int_list, [4, 8, 16, 32]),
    "lemmas.pairs": (int, 1_000_000),
    "output.emit": (_parse_str_set, ["csv", "json"]),
}

EXPERIMENT_OVERRIDES: dict[str, dict] = {
    "selfsim": {"domain.N": 400, "solver.dt": 1e-4, "solver.t_end": 10.0,
                "solver.record_every": 500, "noise.family": "off",
                "ic.kind": "profile", "ic.members": 1,
                "analysis.fit_lo": 0.5, "analysis.fit_hi": 10.0},
    "comedown": {"solver.t_end": 2.0, "solver.record_every": 25,
                 "ensemble.size": 32, "ic.amplitude": 5.0},
    "mix": {"ic.amplitude": 2.0, "ic.amplitude2": -1.0},
    "stability": {"solver.t_end": 1.0, "solver.record_every": 10,
                  "ensemble.size": 16, "ic.amplitude": 20.0},
    "simulate": {"ensemble.size": 8},
}


def load_config(experiment: str, path: str | None, overrides: dict | None = None) -> dict:
    """Defaults, experiment overrides, config file, then CLI overrides, in that order."""
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    cfg = {key: default for key, (_, default) in KEY_TABLE.items()}
    cfg.update(EXPERIMENT_OVERRIDES.get(experiment, {}))
    if path is not None:
        text = Path(path).read_text()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in KEY_TABLE:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            converter = KEY_TABLE[key][0]
            try:
                cfg[key] = converter(value)
            except (TypeError, ValueError) as err:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {err}") from err
    if overrides:
        cfg.update(overrides)
    cfg["experiment"] = experiment
    return cfg


def config_hash(cfg: dict) -> str:
    canon = "\n".join(f"{k}={cfg[k]!r}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Builders

def _grid(cfg):
    return build_grid(cfg["domain.a"], cfg["domain.b"], cfg["domain.N"])


def _nonlinearity(cfg) -> Nonlinearity:
    return Nonlinearity(m=cfg["model.m"], kind=cfg["model.kind"], K=cfg["model.K"])


def _noise(cfg) -> NoiseModel:
    family = cfg["noise.family"]
    modes = cfg["noise.modes"] if family != "off" else 0
    return NoiseModel(family=family, modes=modes, amplitude=cfg["noise.amplitude"],
                      spatial_decay=cfg["noise.decay"], K=cfg["noise.K"],
                      kappa=cfg["noise.kappa"], kappa_bar=cfg["noise.kappa_bar"],
                      m=cfg["model.m"])


def _solver_config(cfg, seed: int, **extra) -> SolverConfig:
    base = dict(
        dt=cfg["solver.dt"], t_end=cfg["solver.t_end"], scheme=cfg["solver.scheme"],
        galerkin_modes=cfg["solver.galerkin_modes"] or None,
        cfl_safety=cfg["solver.cfl_safety"], record_every=cfg["solver.record_every"],
        equation=cfg["solver.equation"], drift=cfg["solver.drift"], seed=seed,
        clip_c=cfg["analysis.clip_c"])
    base.update(extra)
    return SolverConfig(**base)


def _initial_conditions(cfg, grid) -> list[GridFunction]:
    kind = cfg["ic.kind"]
    amps = [cfg["ic.amplitude"], cfg["ic.amplitude2"]][: cfg["ic.members"]]
    if kind == "bump":
        return [bump_profile(grid, a, cfg["ic.center"], cfg["ic.width"]) for a in amps]
    if kind == "sine":
        return [sine_profile(grid, cfg["ic.mode"], a) for a in amps]
    if kind == "profile":
        prof = solve_profile(grid, cfg["model.m"])
        return [GridFunction(grid, a * prof.f.values) for a in amps]
    raise ConfigError(f"unknown initial condition kind {kind!r}")


def _verdict(name, passed, observed, expected, tolerance) -> dict:
    return {"name": name, "pass": bool(passed), "observed": float(observed),
            "expected": float(expected), "tolerance": float(tolerance)}


def _fit_entry(name, fit) -> dict:
    return {"name": name, "exponent": float(fit.exponent), "ci": float(fit.ci_halfwidth)}


# ---------------------------------------------------------------------------
# Experiments: each returns (verdicts, fits, series) where series maps
# name -> (times, mean, stderr).

def _series_of(stats, key):
    return (stats.times, stats.mean[key], stats.stderr[key])


def run_weight_experiment(cfg, threads):
    grid = _grid(cfg)
    w = solve_weight(grid)
    length = grid.length
    m = cfg["model.m"]
    m_star = m / (m - 1.0)

    lap = discrete_laplacian(GridFunction(grid, w.values))
    lap_defect = float(np.max(np.abs(lap.values + 1.0)))
    exact = (grid.nodes - grid.a) * (grid.b - grid.nodes) / 2.0
    nodal_defect = float(np.max(np.abs(w.values - exact)))
    l1 = w.lp(1.0)
    l1_exact = length**3 / 12.0
    verdicts = [
        _verdict("weight_laplacian_identity", lap_defect <= 1e-10, lap_defect, 0.0, 1e-10),
        _verdict("weight_nodal_exactness", nodal_defect <= 1e-12, nodal_defect, 0.0, 1e-12),
        _verdict("weight_l1_quadrature", abs(l1 - l1_exact) <= length * grid.h**2,
                 l1, l1_exact, length * grid.h**2),
    ]
    if abs(m - 2.0) < 1e-12:
        l2 = w.lp(2.0)
        l2_exact = math.sqrt(length**5 / 120.0)
        verdicts.append(_verdict("weight_l2_quadrature", abs(l2 - l2_exact) <= length * grid.h**2,
                                 l2, l2_exact, length * grid.h**2))
    series = {"weight": (grid.nodes, w.values, np.zeros(grid.N))}
    extras = {"lp_norms": {"1": w.lp(1.0), "2": w.lp(2.0), f"{m_star:g}": w.lp(m_star)}}
    return verdicts, [], series, extras


def run_validate_experiment(cfg, threads):
    verdicts = []
    nl = _nonlinearity(cfg)
    report = validate_assumption_A(nl, r_max=10.0, samples=400)
    for clause in report.clauses:
        verdicts.append(_verdict(f"nonlinearity.{clause.name}", clause.passed,
                                 clause.tightest, nl.K, 0.0))
    families = {
        "additive": NoiseModel(family="additive", modes=4, amplitude=1.0, K=cfg["noise.K"],
                               m=cfg["model.m"]),
        "linear": NoiseModel(family="linear", modes=4, amplitude=1.0, K=cfg["noise.K"],
                             m=cfg["model.m"]),
        "holder": NoiseModel(family="holder", modes=4, amplitude=1.0, kappa=0.25,
                             K=cfg["noise.K"], m=cfg["model.m"]),
        "branching": NoiseModel(family="branching", modes=4, amplitude=1.0, kappa=0.05,
                                K=cfg["noise.K"], m=cfg["model.m"]),
        "off": NoiseModel(family="off", m=cfg["model.m"]),
    }
    for name, nm in families.items():
        rep = validate_noise(nm, r_max=10.0, samples=300)
        for clause in rep.clauses:
            verdicts.append(_verdict(f"noise.{name}.{clause.name}", clause.passed,
                                     clause.tightest, nm.K, 0.0))
    return verdicts, [], {}, {}


def run_simulate_experiment(cfg, threads):
    grid = _grid(cfg)
    nl, nm = _nonlinearity(cfg), _noise(cfg)
    ics = _initial_conditions(cfg, grid)
    seed = cfg["ensemble.base_seed"]
    M = cfg["ensemble.size"]
    if M >= 2 and nm.family != "off":
        stats = run_ensemble(_solver_config(cfg, seed), nl, nm, ics, M,
                             base_seed=seed, threads=threads)
        series = {key: _series_of(stats, key) for key in stats.keys()}
        extras = {"n_runs": stats.n_runs, "n_blowups": stats.n_blowups}
    else:
        rec = run_coupled(_solver_config(cfg, seed), nl, nm, ics, seed=seed)
        if rec.blown_up:
            raise BlowUpError(rec.blowup_info or "trajectory blew up")
        zeros = np.zeros_like(rec.times)
        series = {key: (rec.times, rec.series[key], zeros) for key in rec.series}
        extras = {"n_runs": 1, "n_blowups": 0}
    return [], [], series, extras


def _contract_core(cfg, threads):
    grid = _grid(cfg)
    nl, nm = _nonlinearity(cfg), _noise(cfg)
    ics = _initial_conditions(cfg, grid)
    seed = cfg["ensemble.base_seed"]
    stats = run_ensemble(_solver_config(cfg, seed), nl, nm, ics, cfg["ensemble.size"],
                         base_seed=seed, threads=threads)
    return grid, nl, stats


def run_contract_experiment(cfg, threads):
    grid, nl, stats = _contract_core(cfg, threads)
    m = nl.m
    dist = series_from_stats(stats, "pair0-1.w1dist")
    diss = series_from_stats(stats, "pair0-1.adist")
    disc_tol = cfg["analysis.disc_tol_mult"] * float(dist.values[0]) * (grid.h + stats.config.dt)
    verdict = contraction_check(dist, diss, mc_mult=2.0, disc_tol=disc_tol)

    window = (cfg["analysis.fit_lo"], cfg["analysis.fit_hi"])
    target = -1.0 / (m - 1.0)
    verdicts = [
        _verdict("contraction_monotone", verdict.details["monotone"],
                 verdict.details["max_rise"], 0.0, 0.0),
        _verdict("contraction_dissipation", verdict.details["dissipation"],
                 verdict.details.get("max_dissipation_excess", 0.0), 0.0, disc_tol),
    ]
    fits, extras = [], {}
    in_window = dist.restrict(*window)
    if np.all(in_window.values > 0):
        fit = fit_power_exponent(dist, window)
        ok = target - 0.25 <= fit.exponent <= target + 0.15
        verdicts.append(_verdict("rate_exponent_window", ok, fit.exponent, target, 0.25))
        margin = cfg["analysis.envelope_margin"]
        coeff = math.exp(-fit.intercept * (m - 1.0)) / (m - 1.0) / margin ** (m - 1.0)
        positive = dist.restrict(dist.times[1], dist.times[-1])
        env_verdict = ode_comparison(positive, coeff, m, slack=0.0, mc_mult=2.0)
        verdicts.append(_verdict("envelope_domination", env_verdict.passed,
                                 env_verdict.details["max_margin"], 0.0, 0.0))
        fits.append(_fit_entry("pair_distance", fit))
        extras["envelope_coeff"] = coeff
    else:
        # the distance reached zero: faster than any power law, trivially dominated
        verdicts.append(_verdict("rate_exponent_window", True, -1e300, target, 0.25))
        verdicts.append(_verdict("envelope_domination", True, 0.0, 0.0, 0.0))
    series = {key: _series_of(stats, key) for key in
              ("pair0-1.w1dist", "pair0-1.adist", "member0.w1", "member1.w1")}
    return verdicts, fits, series, extras


def run_comedown_experiment(cfg, threads):
    grid = _grid(cfg)
    nl, nm = _nonlinearity(cfg), _noise(cfg)
    base = _initial_conditions(cfg, grid)[0]
    ics = [base, GridFunction(grid, 10.0 * base.values)]
    seed = cfg["ensemble.base_seed"]
    stats = run_ensemble(_solver_config(cfg, seed), nl, nm, ics, cfg["ensemble.size"],
                         base_seed=seed, threads=threads)
    m = nl.m
    stat0 = coming_down_statistic(series_from_stats(stats, "member0.lmp1_pow"), m)
    stat1 = coming_down_statistic(series_from_stats(stats, "member1.lmp1_pow"), m)
    rel = abs(stat0 - stat1) / max(stat0, stat1)
    verdicts = [_verdict("coming_down_ic_independence", rel < 0.25, rel, 0.0, 0.25)]
    series = {key: _series_of(stats, key) for key in ("member0.lmp1_pow", "member1.lmp1_pow")}
    return verdicts, [], series, {"statistic_small_ic": stat0, "statistic_large_ic": stat1}


def run_selfsim_experiment(cfg, threads):
    grid = _grid(cfg)
    nl = _nonlinearity(cfg)
    nm = NoiseModel(family="off", m=nl.m)
    profile = solve_profile(grid, nl.m)
    seed = cfg["ensemble.base_seed"]
    solver_cfg = _solver_config(cfg, seed, store_states=True)
    rec = run_coupled(solver_cfg, nl, nm, [profile.f], seed=seed)
    if rec.blown_up:
        raise BlowUpError(rec.blowup_info or "trajectory blew up")

    verdicts = []
    checkpoints = [t for t in (0.5, 1.0, 5.0, 10.0) if t <= cfg["solver.t_end"] + 1e-12]
    for t in checkpoints:
        idx = int(np.argmin(np.abs(rec.times - t)))
        if abs(rec.times[idx] - t) > 1e-9:
            raise ConfigError(f"checkpoint t={t} is not a recorded time")
        exact = separable_solution(profile, t)
        rel = float(np.max(np.abs(rec.states[idx, 0] - exact.values))
                    / np.max(np.abs(exact.values)))
        verdicts.append(_verdict(f"selfsim_linf_t{t:g}", rel < 0.01, rel, 0.0, 0.01))

    w1 = DecaySeries(rec.times, rec.series["member0.w1"], np.zeros_like(rec.times))
    fit = fit_power_exponent(w1, (cfg["analysis.fit_lo"], cfg["analysis.fit_hi"]),
                             t_shift=1.0)
    target = -1.0 / (nl.m - 1.0)
    verdicts.append(_verdict("selfsim_rate", abs(fit.exponent - target) <= 1e-3,
                             fit.exponent, target, 1e-3))
    series = {"member0.w1": (rec.times, rec.series["member0.w1"], np.zeros_like(rec.times))}
    return verdicts, [_fit_entry("selfsim_norm", fit)], series, \
        {"profile_residual": profile.residual_norm}


def run_mix_experiment(cfg, threads):
    grid, nl, stats = _contract_core(cfg, threads)
    m = nl.m
    dist = series_from_stats(stats, "pair0-1.w1dist")
    verdicts, fits, series = [], [], {"pair0-1.w1dist": _series_of(stats, "pair0-1.w1dist")}
    for fid in ("fmin", "ftrunc"):
        gap = mixing_gap(stats, stats, fid, member_a=0, member_b=1)
        dominated = np.all(gap.values <= dist.values + gap.stderr + dist.stderr + 1e-14)
        excess = float(np.max(gap.values - dist.values - gap.stderr - dist.stderr))
        verdicts.append(_verdict(f"mixing_gap_dominated_{fid}", dominated, excess, 0.0, 0.0))
        series[f"gap.{fid}"] = (gap.times, gap.values, gap.stderr)
        if fid == "fmin":
            window = (cfg["analysis.fit_lo"], cfg["analysis.fit_hi"])
            sub = gap.restrict(*window)
            target = -1.0 / (m - 1.0) + 0.2
            if np.all(sub.values > 0):
                fit = fit_power_exponent(gap, window)
                fits.append(_fit_entry("mixing_gap_fmin", fit))
                verdicts.append(_verdict("mixing_gap_rate", fit.exponent <= target,
                                         fit.exponent, target, 0.0))
            else:
                # gap hit zero inside the window: faster than any power law
                verdicts.append(_verdict("mixing_gap_rate", True, -1e300, target, 0.0))
    return verdicts, fits, series, {}


def run_stability_sweep(cfg: dict, n_values: list[int], threads: int = 1):
    """Convergence sweep over the regularization index.

    For each n the approximating model (regularized nonlinearity, truncated
    noise coefficient, clamped initial condition) is coupled to the reference
    model (the largest n) through shared increments; D(n) is the
    time-integrated weighted-L1 distance between the two members.  Returns
    (verdicts, series, D) with one distance curve per n.
    """
    if len(n_values) < 2 or any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ConfigError("stability n_values must be increasing with >= 2 entries")
    grid = _grid(cfg)
    nl, nm = _nonlinearity(cfg), _noise(cfg)
    ic = _initial_conditions(cfg, grid)[0]
    ref_n = n_values[-1]
    nl_ref = regularize(nl, ref_n)
    nm_ref = truncate_noise(nm, ref_n) if nm.family != "off" else nm
    ic_ref = clamp_initial_condition(ic, ref_n)
    seed = cfg["ensemble.base_seed"]
    stochastic = nm.family != "off"

    D, D_se, series = [], [], {}
    for n in n_values[:-1]:
        members_nl = [regularize(nl, n), nl_ref]
        members_nm = [truncate_noise(nm, n) if stochastic else nm, nm_ref]
        members_ic = [clamp_initial_condition(ic, n), ic_ref]
        solver_cfg = _solver_config(cfg, seed)
        if stochastic:
            stats = run_ensemble(solver_cfg, members_nl, members_nm, members_ic,
                                 cfg["ensemble.size"], base_seed=seed, threads=threads)
            times, mean, se = stats.times, stats.mean["pair0-1.w1dist"], \
                stats.stderr["pair0-1.w1dist"]
        else:
            rec = run_coupled(solver_cfg, members_nl, members_nm, members_ic, seed=seed)
            if rec.blown_up:
                raise BlowUpError(rec.blowup_info or "trajectory blew up")
            times, mean, se = rec.times, rec.series["pair0-1.w1dist"], \
                np.zeros_like(rec.times)
        D.append(float(np.trapezoid(mean, times)))
        D_se.append(float(np.trapezoid(se, times)))
        series[f"dist_n{n}"] = (times, mean, se)

    verdicts = []
    monotone = all(D[i + 1] <= D[i] + 2.0 * (D_se[i] + D_se[i + 1])
                   for i in range(len(D) - 1))
    worst = max((D[i + 1] - D[i] for i in range(len(D) - 1)), default=0.0)
    verdicts.append(_verdict("stability_monotone", monotone, worst, 0.0, 0.0))
    ratio = D[-1] / D[0] if D[0] > 0 else 0.0
    verdicts.append(_verdict("stability_ratio", ratio < 0.5, ratio, 0.0, 0.5))
    series["sweep_D"] = (np.array(n_values[:-1], dtype=float), np.array(D), np.array(D_se))
    return verdicts, series, D


def run_stability_experiment(cfg, threads):
    verdicts, series, D = run_stability_sweep(cfg, cfg["stability.n_values"], threads)
    n_values = cfg["stability.n_values"]
    return verdicts, [], series, {"D": dict(zip(map(str, n_values[:-1]), D))}


def run_lemmas_experiment(cfg, threads):
    verdicts = []
    rng = np.random.default_rng(cfg["ensemble.base_seed"])
    pairs = cfg["lemmas.pairs"]
    for m in (1.5, 2.0, 3.0, 5.0):
        u = rng.uniform(-100.0, 100.0, pairs)
        v = rng.uniform(-100.0, 100.0, pairs)
        _, _, ok = lower_bound_check(u, v, m)
        bad = int(np.sum(~ok))
        verdicts.append(_verdict(f"lower_bound_sweep_m{m:g}", bad == 0, bad, 0.0, 0.0))

    # envelope comparison on the three synthetic cases
    t = np.linspace(0.0, 5.0, 101)
    h = theoretical_envelope(t, 1.0, 1.0, 2.0)
    se = np.zeros_like(t)
    exact = ode_comparison(DecaySeries(t, h, se), 1.0, 2.0)
    sub = ode_comparison(DecaySeries(t, 0.9 * h, se), 1.0, 2.0)
    bad_vals = h.copy()
    bad_vals[50] *= 1.2
    violating = ode_comparison(DecaySeries(t, bad_vals, se), 1.0, 2.0)
    verdicts.append(_verdict("ode_comparison_equality", exact.passed, exact.details["max_margin"], 0.0, 0.0))
    verdicts.append(_verdict("ode_comparison_subsolution", sub.passed, sub.details["max_margin"], 0.0, 0.0))
    verdicts.append(_verdict("ode_comparison_violation_detected", not violating.passed,
                             len(violating.violations), 1.0, 0.0))

    for delta in (0.3, 0.1, 0.03):
        v0, d0, _ = eta_delta(delta, 0.0)
        r = np.concatenate([np.linspace(-10 * delta, 10 * delta, 2001),
                            [-10 * delta, -0.5 * delta, 0.5 * delta, 10 * delta]])
        val, _, d2 = eta_delta(delta, r)
        close = float(np.max(np.abs(val - np.abs(r))))
        outside = np.abs(r) >= delta
        supp_ok = float(np.max(np.abs(d2[outside]))) if np.any(outside) else 0.0
        bound = float(np.max(np.abs(d2)))
        rr = np.linspace(-2 * delta, 2 * delta, 40001)
        quad = float(np.trapezoid(np.abs(eta_delta(delta, rr)[2]), rr))
        verdicts += [
            _verdict(f"eta_origin_d{delta:g}", v0 == 0.0 and d0 == 0.0, abs(v0) + abs(d0), 0.0, 0.0),
            _verdict(f"eta_close_to_abs_d{delta:g}", close <= delta, close, 0.0, delta),
            _verdict(f"eta_curvature_support_d{delta:g}", supp_ok == 0.0, supp_ok, 0.0, 0.0),
            _verdict(f"eta_curvature_bound_d{delta:g}", bound <= 2.0 / delta, bound, 0.0, 2.0 / delta),
            _verdict(f"eta_quadrature_identity_d{delta:g}", abs(quad - 2.0) <= 1e-6, quad, 2.0, 1e-6),
        ]

    m, kappa, kappa_bar = cfg["model.m"], 0.5, 1.0
    lo, hi = nu_interval(m, kappa_bar)
    nu = 0.5 * (lo + hi)
    alpha = vanishing_alpha(m, nu)
    eps_grid = 2.0 ** -np.arange(1, 13)
    valid = [g_alpha(alpha, schedule_delta(e, nu), e, 0.0, kappa, kappa_bar) for e in eps_grid]
    tail_decreasing = all(b < a for a, b in zip(valid[-6:], valid[-5:]))
    verdicts.append(_verdict("g_alpha_vanishing_schedule",
                             tail_decreasing and valid[-1] < 0.05 * valid[0],
                             valid[-1] / valid[0], 0.0, 0.05))
    invalid = [g_alpha(0.45, e, e, 0.0, kappa, kappa_bar) for e in eps_grid]
    verdicts.append(_verdict("g_alpha_invalid_schedule_diverges",
                             invalid[-1] > 10.0 * invalid[0], invalid[-1] / invalid[0],
                             math.inf, 10.0))

    nl = Nonlinearity(m=cfg["model.m"], K=cfg["model.K"])
    rep = validate_assumption_A(nl, r_max=10.0, samples=400)
    verdicts.append(_verdict("assumption_validator_pure_power", rep.passed,
                             max(c.tightest for c in rep.clauses), nl.K, 0.0))
    for family, kwargs in (("additive", {}), ("linear", {}), ("holder", {"kappa": 0.25}),
                           ("branching", {"kappa": 0.05})):
        nm = NoiseModel(family=family, modes=4, amplitude=1.0, K=cfg["noise.K"],
                        m=cfg["model.m"], **kwargs)
        rep = validate_noise(nm, r_max=10.0, samples=300)
        verdicts.append(_verdict(f"noise_validator_{family}", rep.passed,
                                 max(c.tightest for c in rep.clauses), nm.K, 0.0))
    return verdicts, [], {}, {}


RUNNERS = {
    "weight": run_weight_experiment,
    "validate": run_validate_experiment,
    "simulate": run_simulate_experiment,
    "contract": run_contract_experiment,
    "comedown": run_comedown_experiment,
    "selfsim": run_selfsim_experiment,
    "mix": run_mix_experiment,
    "stability": run_stability_experiment,
    "lemmas": run_lemmas_experiment,
}


# ---------------------------------------------------------------------------
# Emission

def _format_float(x: float) -> str:
    return f"{x:.17g}"


def write_csv(path: Path, hash_: str, times, mean, stderr) -> None:
    lines = [f"# config_hash={hash_}", "t,mean,stderr"]
    for t, mu, se in zip(times, mean, stderr):
        lines.append(f"{_format_float(t)},{_format_float(mu)},{_format_float(se)}")
    path.write_text("\n".join(lines) + "\n")


def write_verdicts(path: Path, experiment: str, hash_: str, verdicts, fits, extras) -> None:
    doc = {"experiment": experiment, "config_hash": hash_,
           "verdicts": verdicts, "fits": fits}
    if extras:
        doc["extras"] = extras
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_svg(path: Path, hash_: str, name: str, times, mean, stderr) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    with plt.rc_context({"svg.hashsalt": hash_}):
        fig, ax = plt.subplots(figsize=(5, 4))
        pos = (np.asarray(times) > 0) & (np.asarray(mean) > 0)
        if np.any(pos):
            t, mu = np.asarray(times)[pos], np.asarray(mean)[pos]
            se = np.asarray(stderr)[pos]
            ax.loglog(t, mu, "-", lw=1.2)
            ax.fill_between(t, np.maximum(mu - 2 * se, 1e-300), mu + 2 * se, alpha=0.3)
        ax.set_xlabel("t")
        ax.set_ylabel(name)
        ax.set_title(f"{name} [{hash_}]")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def run_experiment(experiment: str, cfg: dict, out_dir: str | Path,
                   threads: int = 1) -> int:
    """Run one experiment, emit outputs, return the exit code."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    hash_ = config_hash(cfg)
    try:
        verdicts, fits, series, extras = RUNNERS[experiment](cfg, threads)
    except (BlowUpError, EnsembleRejectedError) as err:
        write_verdicts(out / "verdicts.json", experiment, hash_,
                       [_verdict("no_blowup", False, 1.0, 0.0, 0.0)], [],
                       {"error": str(err)})
        return 3
    emit = cfg["output.emit"]
    if "csv" in emit:
        for name, (times, mean, stderr) in series.items():
            write_csv(out / f"{name.replace('.', '_')}.csv", hash_, times, mean, stderr)
    if "svg" in emit:
        for name, (times, mean, stderr) in series.items():
            write_svg(out / f"{name.replace('.', '_')}.svg", hash_, name, times, mean, stderr)
    # the verdict file is the primary output and is always written
    write_verdicts(out / "verdicts.json", experiment, hash_, verdicts, fits, extras)
    return 0 if all(v["pass"] for v in verdicts) else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pmemix",
        description="Porous-medium SPDE simulator and verification harness")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="base seed override")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (must not change results)")
    args = parser.parse_args(argv)

    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("PME_MIXER_THREADS", "1"))
    overrides = {}
    if args.seed is not None:
        overrides["ensemble.base_seed"] = args.seed
    try:
        cfg = load_config(args.experiment, args.config, overrides)
        code = run_experiment(args.experiment, cfg, args.out, threads)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (BlowUpError, EnsembleRejectedError) as err:
        print(f"numerical blow-up: {err}", file=sys.stderr)
        return 3
    return code


if __name__ == "__main__":
    sys.exit(main())
