"""Inner solver machinery: touching surrogate bounds, ratio iteration,
feasibility phase, and the full maximin driver."""

import dataclasses

import numpy as np
import pytest

from cfcoex.channel_stats import compute_stats
from cfcoex.heuristics import fpc, gfpc, mark_feasible, upc
from cfcoex.optimizer import (RateSurrogate, SolverError, capacity_surrogate,
                              dinkelbach, dispersion_surrogate, initial_point,
                              phase1_point, sequential_fp)
from cfcoex.rates import (EEParams, MomentSet, PowerVector, dispersion,
                          energy_efficiency, fbl_rate, mmtc_sinr,
                          shannon_rate)
from cfcoex.scenario import generate_deployment

from conftest import desk_scenario


def random_interior(config, rng):
    return np.concatenate([
        config.P_u_max * rng.uniform(0.05, 0.95, config.K_u),
        config.Q_d_max * rng.uniform(0.05, 0.95, config.K_d)])


@pytest.fixture(scope="module")
def solved_desk():
    """First two feasible desk instances, solved once for all tests."""
    cfg = desk_scenario()
    out = []
    for inst in range(10):
        dep = generate_deployment(cfg, inst)
        moments = MomentSet.compute(compute_stats(dep, cfg), dep, cfg)
        res = sequential_fp(cfg, dep, moments)
        if res.feasible:
            out.append((cfg, dep, moments, res))
        if len(out) == 2:
            break
    assert len(out) == 2, "need two feasible desk instances"
    return out


class TestSurrogateBounds:
    def test_touch_at_anchor(self, desk_instance):
        config, _, _, m = desk_instance
        params = EEParams.from_config(config)
        rng = np.random.default_rng(2)
        for _ in range(5):
            x_bar = random_interior(config, rng)
            theta_bar = PowerVector.from_array(x_bar, config.K_u)
            rho = mmtc_sinr(m, theta_bar)
            c_val, _ = capacity_surrogate(x_bar, x_bar, m, config)
            np.testing.assert_allclose(c_val, shannon_rate(rho), rtol=1e-10)
            d_val, _ = dispersion_surrogate(x_bar, x_bar, m, config,
                                            params.v_d)
            np.testing.assert_allclose(d_val, params.v_d * dispersion(rho),
                                       rtol=1e-10)

    def test_bound_directions(self, desk_instance):
        config, _, _, m = desk_instance
        params = EEParams.from_config(config)
        rng = np.random.default_rng(3)
        for _ in range(200):
            x_bar = random_interior(config, rng)
            x = random_interior(config, rng)
            theta = PowerVector.from_array(x, config.K_u)
            rho = mmtc_sinr(m, theta)
            c_val, _ = capacity_surrogate(x, x_bar, m, config)
            assert np.all(c_val <= shannon_rate(rho) + 1e-12)
            d_val, _ = dispersion_surrogate(x, x_bar, m, config, params.v_d)
            assert np.all(d_val >= params.v_d * dispersion(rho) - 1e-12)

    def test_gradients_by_finite_differences(self, desk_instance):
        config, _, _, m = desk_instance
        params = EEParams.from_config(config)
        rng = np.random.default_rng(5)
        x_bar = random_interior(config, rng)
        x = random_interior(config, rng)
        for maker in (lambda z: capacity_surrogate(z, x_bar, m, config),
                      lambda z: dispersion_surrogate(z, x_bar, m, config,
                                                     params.v_d)):
            val, grad = maker(x)
            fd = np.zeros_like(grad)
            for j in range(len(x)):
                h = 1e-6 * x[j]
                xp, xm = x.copy(), x.copy()
                xp[j] += h
                xm[j] -= h
                fd[:, j] = (maker(xp)[0] - maker(xm)[0]) / (2 * h)
            scale = np.maximum(np.abs(grad), np.abs(fd)).max()
            assert np.max(np.abs(grad - fd)) / scale < 1e-5

    def test_rate_surrogate_is_concave(self, desk_instance):
        config, _, _, m = desk_instance
        params = EEParams.from_config(config)
        rng = np.random.default_rng(7)
        x_bar = random_interior(config, rng)
        surro = RateSurrogate(m, x_bar, v_d=params.v_d)
        for _ in range(100):
            a = random_interior(config, rng)
            b = random_interior(config, rng)
            mid = surro.value(0.5 * (a + b))
            avg = 0.5 * (surro.value(a) + surro.value(b))
            assert np.all(mid >= avg - 1e-12)

    def test_backoff_surrogate_is_convex(self, desk_instance):
        config, _, _, m = desk_instance
        params = EEParams.from_config(config)
        rng = np.random.default_rng(9)
        x_bar = random_interior(config, rng)
        for _ in range(100):
            a = random_interior(config, rng)
            b = random_interior(config, rng)
            mid, _ = dispersion_surrogate(0.5 * (a + b), x_bar, m, config,
                                          params.v_d)
            va, _ = dispersion_surrogate(a, x_bar, m, config, params.v_d)
            vb, _ = dispersion_surrogate(b, x_bar, m, config, params.v_d)
            assert np.all(mid <= 0.5 * (va + vb) + 1e-12)


class TestRatioIteration:
    def test_two_ratio_analytic_optimum(self):
        # maximin of {(1+x)/2, (9-x)/3} on [0, 4]: curves cross at x=3
        # where both ratios equal 2
        def subproblem(vartheta):
            x = np.clip((8.0 - vartheta) / 2.0, 0.0, 4.0)
            res = min(1.0 + x - 2.0 * vartheta, 9.0 - x - 3.0 * vartheta)
            return x, res, 1

        def ratio(x):
            return min((1.0 + x) / 2.0, (9.0 - x) / 3.0)

        x_star, v_star, residuals, iters, work = dinkelbach(
            subproblem, ratio, vartheta0=ratio(0.0))
        assert v_star == pytest.approx(2.0, abs=1e-6)
        assert x_star == pytest.approx(3.0, abs=1e-5)
        assert all(a > b for a, b in zip(residuals, residuals[1:]))
        assert residuals[-1] <= 1e-6

    def test_single_ratio(self):
        # max x/(0.5x+1) on [0, 2] is increasing: optimum 1.0 at x=2
        def subproblem(vartheta):
            cand = np.array([0.0, 2.0])
            vals = cand - vartheta * (0.5 * cand + 1.0)
            j = int(np.argmax(vals))
            return cand[j], float(vals[j]), 1

        x_star, v_star, _, _, _ = dinkelbach(
            subproblem, lambda x: x / (0.5 * x + 1.0), vartheta0=0.0)
        assert v_star == pytest.approx(1.0, abs=1e-9)
        assert x_star == pytest.approx(2.0)

    def test_stalled_residual_raises(self):
        with pytest.raises(SolverError):
            dinkelbach(lambda v: (0.0, 1.0, 1), lambda x: 0.0,
                       vartheta0=0.0, max_iter=5)


class TestFeasibilityPhase:
    def test_most_interior_point_1d(self):
        # single row x - 0.2 >= 0 with cap 1: pushes to the box ceiling
        x, slack = phase1_point(np.array([[1.0]]), np.array([-0.2]),
                                np.array([1.0]))
        assert x[0] == pytest.approx(0.999, rel=1e-9)
        assert slack == pytest.approx(0.799, rel=1e-9)

    def test_empty_set_reports_negative_slack(self):
        # x >= 2 cannot hold inside the unit box
        _, slack = phase1_point(np.array([[1.0]]), np.array([-2.0]),
                                np.array([1.0]))
        assert slack < 0.0

    def test_initial_point_is_strictly_feasible(self, solved_desk):
        from cfcoex.optimizer import _linear_rows, _strictly_feasible
        from cfcoex.rates import constraint_thresholds
        config, dep, moments, _ = solved_desk[0]
        params = EEParams.from_config(config)
        gamma_th, rho_th = constraint_thresholds(config, params, "fbl")
        lin_a, lin_b, _ = _linear_rows(moments, gamma_th, rho_th,
                                       config.S_min)
        caps = np.concatenate([np.full(config.K_u, config.P_u_max),
                               np.full(config.K_d, config.Q_d_max)])
        x0, _ = initial_point(config, dep, moments, params, lin_a, lin_b,
                              "fbl")
        assert x0 is not None
        assert _strictly_feasible(x0, lin_a, lin_b, caps)


class TestMaximinDriver:
    def test_solution_is_feasible_and_consistent(self, solved_desk):
        for config, dep, moments, res in solved_desk:
            assert res.feasible and res.theta_star is not None
            report = mark_feasible(res.theta_star, moments, config)
            assert report.feasible, report.violated
            assert res.objective == pytest.approx(
                float(np.min(res.per_terminal["device_ee"])), rel=1e-12)
            assert np.all(res.theta_star.p <= config.P_u_max * (1 + 1e-9))
            assert np.all(res.theta_star.q <= config.Q_d_max * (1 + 1e-9))

    def test_objective_trace_never_decreases(self, solved_desk):
        for _, _, _, res in solved_desk:
            trace = np.asarray(res.trace)
            assert len(trace) >= 2
            assert np.all(np.diff(trace) >= -1e-9 * trace.max())

    def test_ratio_residuals_strictly_decrease(self, solved_desk):
        for _, _, _, res in solved_desk:
            assert res.f_traces
            for run in res.f_traces:
                assert all(a > b for a, b in zip(run, run[1:]))
                assert run[-1] <= 1e-6

    def test_beats_every_closed_form_policy(self, solved_desk):
        for config, dep, moments, res in solved_desk:
            params = EEParams.from_config(config)
            for theta in (upc(config), gfpc(config, dep), fpc(config, dep)):
                report = mark_feasible(theta, moments, config)
                if not report.feasible:
                    continue
                rho = mmtc_sinr(moments, theta)
                ee = energy_efficiency(theta, fbl_rate(rho, params.v_d),
                                       params)
                assert res.objective >= float(np.min(ee)) * (1 - 1e-6)

    def test_user_floor_binds_at_optimum(self, solved_desk):
        # extra user power only adds interference for the devices, so the
        # solver leaves users exactly at their rate floor
        for config, _, moments, res in solved_desk:
            report = mark_feasible(res.theta_star, moments, config)
            assert float(np.min(report.slacks["C4"])) < 0.01

    def test_shannon_regime_at_least_as_good(self, solved_desk):
        config, dep, moments, res = solved_desk[0]
        sh = sequential_fp(config, dep, moments, regime="shannon")
        assert sh.feasible
        assert sh.objective >= res.objective * (1 - 1e-6)

    def test_impossible_floor_reports_infeasible(self, desk_instance):
        config, dep, _, moments = desk_instance
        hard = dataclasses.replace(config, R_embb_min=1e9)
        res = sequential_fp(hard, dep, moments)
        assert not res.feasible
        assert res.theta_star is None
        assert res.objective == 0.0
        assert np.all(res.per_terminal["device_ee"] == 0.0)

    def test_rejects_unknown_regime(self, desk_instance):
        config, dep, _, moments = desk_instance
        with pytest.raises(ValueError):
            sequential_fp(config, dep, moments, regime="bogus")

    def test_two_terminal_instance_matches_grid(self):
        # one user, one device: the true maximin reduces to a dense 2-D
        # scan of the exact objective over the feasible box. A log-spaced
        # localization pass (the user's optimum power sits orders of
        # magnitude below its cap) is refined by a linear pass around the
        # coarse argmax.
        cfg = desk_scenario(K_u=1, K_d=1, tau_p=1, tau_u=99)
        params = EEParams.from_config(cfg)

        def exact_best(moments, p_axis, q_axis):
            pp, qq = np.meshgrid(p_axis, q_axis, indexing="ij")
            gamma = moments.delta[0] * pp / (
                moments.upsilon[0] * pp + moments.varkappa[0, 0] * qq
                + moments.xi[0])
            rho = moments.lam[0] * qq / (
                moments.nu[0] * qq + moments.eps_du[0, 0] * pp
                + moments.chi[0])
            se = fbl_rate(rho, params.v_d[0])
            ok = ((params.user_prelog * shannon_rate(gamma)
                   >= cfg.R_embb_min)
                  & (params.device_prelog * se >= cfg.R_mmtc_min)
                  & (rho >= cfg.S_min))
            if not ok.any():
                return None, None, None
            ee = np.where(ok, params.device_prelog * se
                          / (cfg.mu_d * qq + cfg.Theta_d), -np.inf)
            i, j = np.unravel_index(np.argmax(ee), ee.shape)
            return float(ee[i, j]), p_axis[i], q_axis[j]

        def neighborhood(axis, idx_value, lo_cap, hi_cap):
            k = int(np.searchsorted(axis, idx_value))
            lo = axis[max(k - 2, 0)]
            hi = axis[min(k + 2, len(axis) - 1)]
            return np.linspace(max(lo, lo_cap), min(hi, hi_cap), 400)

        checked = 0
        for inst in range(6):
            dep = generate_deployment(cfg, inst)
            moments = MomentSet.compute(compute_stats(dep, cfg), dep, cfg)
            res = sequential_fp(cfg, dep, moments)
            if not res.feasible:
                continue
            p_coarse = np.geomspace(1e-9 * cfg.P_u_max, cfg.P_u_max, 400)
            q_coarse = np.geomspace(1e-9 * cfg.Q_d_max, cfg.Q_d_max, 400)
            best, p_at, q_at = exact_best(moments, p_coarse, q_coarse)
            assert best is not None
            p_fine = neighborhood(p_coarse, p_at, 0.0, cfg.P_u_max)
            q_fine = neighborhood(q_coarse, q_at, 0.0, cfg.Q_d_max)
            refined, _, _ = exact_best(moments, p_fine, q_fine)
            grid_best = max(best, refined)
            assert abs(res.objective - grid_best) / grid_best < 5e-3
            checked += 1
            if checked == 2:
                break
        assert checked == 2, "need two feasible two-terminal instances"
