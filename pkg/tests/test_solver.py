import numpy as np
import pytest
from scipy.fft import dst

from pmemix._errors import ConfigError, EnsembleRejectedError
from pmemix.domain import build_grid, bump_profile, grid_function, sine_profile
from pmemix.exactsol import separable_solution, solve_profile
from pmemix.model import NoiseModel, Nonlinearity
from pmemix.solver import (NoiseIncrements, SolverConfig, clamp_initial_condition,
                           run_coupled, run_ensemble, step_fd, step_galerkin,
                           step_semilinear)

OFF = NoiseModel(family="off", m=2.0)


def linear_noise(c=0.5, modes=4, m=2.0):
    return NoiseModel(family="linear", modes=modes, amplitude=c, K=6.0, m=m)


class TestNoiseIncrements:
    def test_bit_exact_regeneration(self):
        a = NoiseIncrements(901, 6, 1e-3)
        b = NoiseIncrements(901, 6, 1e-3)
        for step in (1, 2, 77, 123456):
            assert np.array_equal(a.for_step(step), b.for_step(step))

    def test_steps_differ(self):
        inc = NoiseIncrements(5, 4, 1e-3)
        assert not np.array_equal(inc.for_step(1), inc.for_step(2))

    def test_seeds_differ(self):
        assert not np.array_equal(NoiseIncrements(1, 4, 1e-3).for_step(3),
                                  NoiseIncrements(2, 4, 1e-3).for_step(3))

    def test_out_of_order_access(self):
        inc = NoiseIncrements(9, 3, 1e-3)
        late = inc.for_step(500)
        early = inc.for_step(2)
        inc2 = NoiseIncrements(9, 3, 1e-3)
        assert np.array_equal(early, inc2.for_step(2))
        assert np.array_equal(late, inc2.for_step(500))

    def test_moments(self):
        inc = NoiseIncrements(31415, 4, 0.25)
        draws = np.concatenate([inc.for_step(s) for s in range(1, 5001)])
        assert abs(draws.mean()) < 0.02
        assert draws.var() == pytest.approx(0.25, rel=0.05)


class TestStepFd:
    def test_zero_fixed_point(self):
        grid = build_grid(0, 1, 50)
        state = grid_function(grid, np.zeros(50))
        for scheme in ("fd_semi_implicit", "fd_explicit"):
            out = step_fd(state, Nonlinearity(m=2.0), OFF, 1e-3, scheme=scheme)
            assert np.all(out.values == 0.0)

    def test_zero_fixed_with_state_proportional_noise(self):
        grid = build_grid(0, 1, 50)
        state = grid_function(grid, np.zeros(50))
        dW = np.full(4, 0.3)
        out = step_fd(state, Nonlinearity(m=2.0), linear_noise(), 1e-3, dW=dW)
        assert np.all(out.values == 0.0)

    def test_single_step_tracks_separable_solution(self):
        grid = build_grid(0, 1, 100)
        profile = solve_profile(grid, 2.0)
        dt = 1e-3
        out = step_fd(profile.f, Nonlinearity(m=2.0), OFF, dt)
        expected = separable_solution(profile, dt)
        err = np.max(np.abs(out.values - expected.values)) / np.max(expected.values)
        assert err <= 0.5 * (dt + grid.h**2)

    def test_oddness_preserved(self):
        grid = build_grid(-1, 1, 101)
        state = sine_profile(grid, mode=2, amplitude=1.5)  # odd about x = 0
        assert np.allclose(state.values, -state.values[::-1], atol=1e-15)
        out = state
        for _ in range(50):
            out = step_fd(out, Nonlinearity(m=2.0), OFF, 5e-4)
        assert np.max(np.abs(out.values + out.values[::-1])) <= 1e-12

    def test_comparison_principle(self):
        grid = build_grid(0, 1, 80)
        nl = Nonlinearity(m=2.0)
        lo = bump_profile(grid, 0.5)
        hi = bump_profile(grid, 1.0)
        for scheme in ("fd_semi_implicit", "fd_explicit"):
            cfg = SolverConfig(dt=5e-4, t_end=0.5, scheme=scheme, record_every=100,
                               store_states=True)
            rec = run_coupled(cfg, nl, OFF, [lo, hi], seed=1)
            gaps = rec.states[:, 1, :] - rec.states[:, 0, :]
            assert np.min(gaps) >= -1e-10


class TestGalerkin:
    def test_full_basis_matches_fd(self):
        grid = build_grid(0, 1, 64)
        nl = Nonlinearity(m=2.0)
        ic = bump_profile(grid, 1.0)
        cfg_fd = SolverConfig(dt=1e-3, t_end=0.2, record_every=20, store_states=True)
        cfg_sp = SolverConfig(dt=1e-3, t_end=0.2, scheme="galerkin", record_every=20,
                              store_states=True)
        rec_fd = run_coupled(cfg_fd, nl, OFF, [ic], seed=3)
        rec_sp = run_coupled(cfg_sp, nl, OFF, [ic], seed=3)
        assert np.max(np.abs(rec_fd.states - rec_sp.states)) <= 1e-9

    def test_linear_mode_exact_decay(self):
        # single sine mode under A(r) = r: the implicit factor per mode and step
        grid = build_grid(0, 1, 63)
        nl = Nonlinearity(m=2.0, kind="linear")
        dt, steps, k = 1e-3, 100, 3
        lam = -(4.0 / grid.h**2) * np.sin(k * np.pi / (2 * (grid.N + 1))) ** 2
        coeffs = np.zeros(grid.N)
        coeffs[k - 1] = 1.0
        for _ in range(steps):
            coeffs = step_galerkin(coeffs, grid, nl, OFF, dt)
        expected = (1.0 - dt * lam) ** (-steps)
        assert coeffs[k - 1] == pytest.approx(expected, rel=1e-12)
        others = np.delete(coeffs, k - 1)
        assert np.max(np.abs(others)) <= 1e-14

    def test_single_mode_confinement(self):
        grid = build_grid(0, 1, 40)
        nl = Nonlinearity(m=2.0)
        cfg = SolverConfig(dt=1e-3, t_end=0.1, scheme="galerkin", galerkin_modes=1,
                           record_every=10, store_states=True)
        rec = run_coupled(cfg, nl, OFF, [sine_profile(grid, 1, 1.0)], seed=5)
        for state in rec.states[:, 0, :]:
            spectrum = dst(state, type=1, norm="ortho")
            assert np.max(np.abs(spectrum[1:])) <= 1e-13


class TestSemilinear:
    def test_heat_energy_dissipates(self):
        grid = build_grid(0, 1, 60)
        state = bump_profile(grid, 1.0)
        energies = []
        for _ in range(100):
            energies.append(float(np.sum(state.values**2) * grid.h))
            state = step_semilinear(state, "zero", OFF, 1e-3)
        assert np.all(np.diff(energies) <= 1e-14)

    def test_cubic_zero_fixed_point(self):
        grid = build_grid(0, 1, 30)
        state = grid_function(grid, np.zeros(30))
        out = step_semilinear(state, "cubic_dissipative", OFF, 1e-3)
        assert np.all(out.values == 0.0)

    def test_exponential_gap_decay(self):
        grid = build_grid(0, 1, 80)
        nl = Nonlinearity(m=2.0)
        cfg = SolverConfig(dt=1e-3, t_end=2.0, equation="semilinear",
                           drift="cubic_dissipative", record_every=100)
        rec = run_coupled(cfg, nl, OFF, [bump_profile(grid, 1.0),
                                         bump_profile(grid, -1.0)], seed=2)
        gap = rec.series["pair0-1.w1dist"]
        times = rec.times
        slope = np.polyfit(times[1:], np.log(gap[1:]), 1)[0]
        spectral_gap = (4.0 / grid.h**2) * np.sin(np.pi / (2 * (grid.N + 1))) ** 2
        assert slope <= -0.5 * spectral_gap


class TestCoupling:
    @pytest.mark.parametrize("scheme", ["fd_semi_implicit", "fd_explicit", "galerkin"])
    @pytest.mark.parametrize("family", ["off", "linear", "additive", "branching"])
    def test_null_coupling(self, scheme, family):
        grid = build_grid(0, 1, 40)
        if family == "off":
            nm = OFF
        else:
            kw = {"kappa": 0.05} if family == "branching" else {}
            nm = NoiseModel(family=family, modes=3, amplitude=0.4, K=6.0, m=2.0, **kw)
        ic = bump_profile(grid, 1.0)
        cfg = SolverConfig(dt=1e-3, t_end=0.2, scheme=scheme, record_every=20)
        rec = run_coupled(cfg, Nonlinearity(m=2.0), nm, [ic, ic], seed=11)
        assert np.all(rec.series["pair0-1.w1dist"] == 0.0)

    def test_reproducible_records(self):
        grid = build_grid(0, 1, 50)
        cfg = SolverConfig(dt=1e-3, t_end=0.3, record_every=30)
        ics = [bump_profile(grid, 2.0), bump_profile(grid, -2.0)]
        a = run_coupled(cfg, Nonlinearity(m=2.0), linear_noise(), ics, seed=77)
        b = run_coupled(cfg, Nonlinearity(m=2.0), linear_noise(), ics, seed=77)
        for key in a.series:
            assert np.array_equal(a.series[key], b.series[key])

    def test_deterministic_single_norm_nonincreasing(self):
        grid = build_grid(0, 1, 80)
        cfg = SolverConfig(dt=5e-4, t_end=1.0, record_every=20)
        rec = run_coupled(cfg, Nonlinearity(m=2.0), OFF, [bump_profile(grid, 2.0)], seed=1)
        w1 = rec.series["member0.w1"]
        assert np.all(np.diff(w1) <= 1e-12)

    def test_mesh_refinement_self_convergence(self):
        nl = Nonlinearity(m=2.0)
        curves = {}
        for N, dt, every in ((100, 2e-3, 25), (201, 1e-3, 50)):
            grid = build_grid(0, 1, N)
            ics = [bump_profile(grid, 2.0), bump_profile(grid, -2.0)]
            cfg = SolverConfig(dt=dt, t_end=1.0, record_every=every)
            rec = run_coupled(cfg, nl, OFF, ics, seed=1)
            curves[N] = (rec.times, rec.series["pair0-1.w1dist"])
        t_coarse, d_coarse = curves[100]
        t_fine, d_fine = curves[201]
        assert np.allclose(t_coarse, t_fine)
        assert np.max(np.abs(d_coarse - d_fine)) <= 0.02 * d_coarse[0]

    def test_blowup_flagged_with_partial_records(self):
        grid = build_grid(0, 1, 30)
        nm = NoiseModel(family="linear", modes=2, amplitude=1e6, K=6.0, m=2.0)
        cfg = SolverConfig(dt=1e-2, t_end=5.0, record_every=1)
        rec = run_coupled(cfg, Nonlinearity(m=2.0), nm, [bump_profile(grid, 1.0)], seed=3)
        assert rec.blown_up
        assert rec.blowup_info
        assert rec.times[-1] < 5.0


class TestEnsemble:
    def test_noise_off_collapses_to_deterministic(self):
        grid = build_grid(0, 1, 40)
        cfg = SolverConfig(dt=1e-3, t_end=0.2, record_every=20)
        ics = [bump_profile(grid, 2.0), bump_profile(grid, -2.0)]
        stats = run_ensemble(cfg, Nonlinearity(m=2.0), OFF, ics, M=4, base_seed=5)
        single = run_coupled(cfg, Nonlinearity(m=2.0), OFF, ics, seed=5)
        for key in stats.mean:
            assert np.array_equal(stats.mean[key], single.series[key])
            assert np.all(stats.stderr[key] == 0.0)

    def test_worker_count_invariance(self):
        grid = build_grid(0, 1, 40)
        cfg = SolverConfig(dt=1e-3, t_end=0.2, record_every=20)
        ics = [bump_profile(grid, 2.0), bump_profile(grid, -2.0)]
        nl, nm = Nonlinearity(m=2.0), linear_noise()
        s1 = run_ensemble(cfg, nl, nm, ics, M=6, base_seed=9, threads=1)
        s2 = run_ensemble(cfg, nl, nm, ics, M=6, base_seed=9, threads=2)
        for key in s1.mean:
            assert np.array_equal(s1.mean[key], s2.mean[key])
            assert np.array_equal(s1.stderr[key], s2.stderr[key])

    def test_stderr_scaling_with_ensemble_size(self):
        grid = build_grid(0, 1, 30)
        cfg = SolverConfig(dt=2e-3, t_end=0.2, record_every=20)
        ics = [bump_profile(grid, 2.0), bump_profile(grid, -2.0)]
        nl, nm = Nonlinearity(m=2.0), linear_noise()
        small = run_ensemble(cfg, nl, nm, ics, M=64, base_seed=100)
        big = run_ensemble(cfg, nl, nm, ics, M=256, base_seed=100)
        key = "pair0-1.w1dist"
        ratio = np.mean(small.stderr[key][1:]) / np.mean(big.stderr[key][1:])
        assert ratio == pytest.approx(2.0, rel=0.2)

    def test_rejected_when_too_many_blow_up(self):
        grid = build_grid(0, 1, 30)
        nm = NoiseModel(family="linear", modes=2, amplitude=1e6, K=6.0, m=2.0)
        cfg = SolverConfig(dt=1e-2, t_end=5.0, record_every=10)
        with pytest.raises(EnsembleRejectedError):
            run_ensemble(cfg, Nonlinearity(m=2.0), nm, [bump_profile(grid, 1.0)],
                         M=4, base_seed=1)

    def test_needs_at_least_two_runs(self):
        grid = build_grid(0, 1, 30)
        cfg = SolverConfig(dt=1e-3, t_end=0.1)
        with pytest.raises(ConfigError):
            run_ensemble(cfg, Nonlinearity(m=2.0), OFF, [bump_profile(grid, 1.0)], M=1)


class TestConfigValidation:
    def test_clamp_preprocessor(self):
        grid = build_grid(0, 1, 30)
        ic = bump_profile(grid, 10.0)
        clamped = clamp_initial_condition(ic, 4.0)
        assert np.max(clamped.values) == 4.0
        assert np.all(clamped.values <= np.maximum(ic.values, 4.0))

    def test_bad_configs_rejected(self):
        with pytest.raises(ConfigError):
            SolverConfig(dt=0.2, t_end=0.1)
        with pytest.raises(ConfigError):
            SolverConfig(dt=1e-3, t_end=1.0, scheme="spectral_magic")
        with pytest.raises(ConfigError):
            SolverConfig(dt=1e-3, t_end=1.0, cfl_safety=1.5)
        with pytest.raises(ConfigError):
            SolverConfig(dt=1e-3, t_end=1.0, drift="unknown")
