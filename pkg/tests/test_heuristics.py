"""Baseline power-control policies and the constraint verdict."""

import dataclasses

import numpy as np
import pytest

from cfcoex.heuristics import fpc, gfpc, mark_feasible, upc
from cfcoex.rates import PowerVector, mmtc_sinr, terminal_performance
from cfcoex.scenario import Deployment, generate_deployment

from conftest import desk_scenario


def controlled_deployment(agg_ratios_u, agg_ratios_d):
    """Single-AP deployment with hand-picked fading so policy ratios are
    analytic; positions are placeholders."""
    k_u, k_d = len(agg_ratios_u), len(agg_ratios_d)
    return Deployment(
        ap_pos=np.zeros((1, 3)),
        user_pos=np.zeros((k_u, 3)),
        device_pos=np.zeros((k_d, 3)),
        alpha=np.asarray(agg_ratios_u, float)[None, :],
        beta=np.asarray(agg_ratios_d, float)[None, :],
        a_mask=np.ones((1, k_u), dtype=np.int64),
        b_mask=np.ones((1, k_d), dtype=np.int64),
        pilot_of_user=np.arange(k_u),
        pilot_of_device=np.arange(k_u, k_u + k_d),
    )


class TestPolicies:
    def test_uniform_uses_full_budgets(self, desk_config):
        theta = upc(desk_config)
        np.testing.assert_array_equal(theta.p, desk_config.P_u_max)
        np.testing.assert_array_equal(theta.q, desk_config.Q_d_max)

    def test_zero_exponent_reduces_to_uniform(self, desk_instance):
        config, dep, _, _ = desk_instance
        flat = gfpc(config, dep, kappa=0.0)
        np.testing.assert_array_equal(flat.p, upc(config).p)
        np.testing.assert_array_equal(flat.q, upc(config).q)
        flat = fpc(config, dep, kappa=0.0)
        np.testing.assert_array_equal(flat.q, upc(config).q)

    def test_budgets_never_exceeded(self, desk_instance):
        config, dep, _, _ = desk_instance
        for kappa in (-1.0, -0.5, 0.0, 0.5, 1.0):
            for policy in (gfpc, fpc):
                theta = policy(config, dep, kappa=kappa)
                assert np.all(theta.p > 0) and np.all(theta.q > 0)
                assert np.all(theta.p <= config.P_u_max * (1 + 1e-12))
                assert np.all(theta.q <= config.Q_d_max * (1 + 1e-12))

    def test_full_inversion_equalizes_received_power(self, desk_instance):
        config, dep, _, _ = desk_instance
        theta = gfpc(config, dep, kappa=-1.0)
        agg_u = np.einsum("mu,mu->u", dep.a_mask.astype(float), dep.alpha)
        agg_d = np.einsum("md,md->d", dep.b_mask.astype(float), dep.beta)
        # equalized within each class; classes keep their own budgets
        received_u = theta.p * agg_u
        received_d = theta.q * agg_d
        np.testing.assert_allclose(received_u, received_u[0], rtol=1e-12)
        np.testing.assert_allclose(received_d, received_d[0], rtol=1e-12)
        assert received_u[0] / received_d[0] == pytest.approx(
            config.P_u_max / config.Q_d_max, rel=1e-12)

    def test_square_root_compensation_ratio(self, desk_config):
        # 4:1 fading advantage at kappa=-1/2 yields a 1:2 power ratio
        dep = controlled_deployment([4e-9, 1e-9], [4e-9, 1e-9, 1e-9])
        theta = gfpc(desk_config, dep, kappa=-0.5)
        assert theta.p[1] / theta.p[0] == pytest.approx(2.0, rel=1e-12)
        assert theta.q[1] / theta.q[0] == pytest.approx(2.0, rel=1e-12)
        # the weakest terminal sits at its class budget
        assert max(theta.p.max() / desk_config.P_u_max,
                   theta.q.max() / desk_config.Q_d_max) == pytest.approx(1.0)

    def test_strongest_ap_variant_ignores_weaker_links(self, desk_config):
        cfg = dataclasses.replace(desk_config, M=2, M_s=2)
        dep = Deployment(
            ap_pos=np.zeros((2, 3)), user_pos=np.zeros((2, 3)),
            device_pos=np.zeros((3, 3)),
            alpha=np.array([[4e-9, 1e-9], [1e-10, 1e-10]]),
            beta=np.array([[4e-9, 1e-9, 1e-9], [1e-10, 1e-10, 1e-10]]),
            a_mask=np.ones((2, 2), dtype=np.int64),
            b_mask=np.ones((2, 3), dtype=np.int64),
            pilot_of_user=np.array([0, 1]),
            pilot_of_device=np.array([2, 0, 1]))
        theta = fpc(cfg, dep, kappa=-0.5)
        # ratios follow the strongest AP (4:1), not the aggregate
        assert theta.p[1] / theta.p[0] == pytest.approx(2.0, rel=1e-12)

    def test_rejects_bad_exponent(self, desk_instance):
        config, dep, _, _ = desk_instance
        for kappa in (-1.5, 1.2):
            with pytest.raises(ValueError):
                gfpc(config, dep, kappa=kappa)
            with pytest.raises(ValueError):
                fpc(config, dep, kappa=kappa)

    def test_rejects_degenerate_fading(self, desk_config):
        dep = controlled_deployment([1e-9, 0.0], [1e-9, 1e-9, 1e-9])
        with pytest.raises(ValueError):
            gfpc(desk_config, dep, kappa=-0.5)
        with pytest.raises(ValueError):
            fpc(desk_config, dep, kappa=-0.5)


class TestFeasibilityVerdict:
    def test_zero_power_violates_rate_floors_only(self, desk_instance):
        config, _, _, m = desk_instance
        theta = PowerVector(p=np.zeros(config.K_u), q=np.zeros(config.K_d))
        report = mark_feasible(theta, m, config)
        assert not report.feasible
        assert report.violated == ["C3", "C4", "C5"]
        assert np.min(report.slacks["C1"]) >= 0.0  # boxes hold at zero
        assert np.min(report.slacks["C2"]) >= 0.0

    def test_budget_overrun_flags_boxes(self, desk_instance):
        config, _, _, m = desk_instance
        theta = PowerVector(p=np.full(config.K_u, 2 * config.P_u_max),
                            q=np.full(config.K_d, 2 * config.Q_d_max))
        report = mark_feasible(theta, m, config)
        assert "C1" in report.violated and "C2" in report.violated

    def test_slacks_are_relative(self, desk_instance):
        config, _, _, m = desk_instance
        theta = PowerVector(p=np.full(config.K_u, config.P_u_max / 2),
                            q=np.full(config.K_d, config.Q_d_max / 4))
        report = mark_feasible(theta, m, config)
        np.testing.assert_allclose(report.slacks["C2"], 0.5, rtol=1e-12)
        np.testing.assert_allclose(report.slacks["C1"], 0.25, rtol=1e-12)
        perf = terminal_performance(theta, m, config)
        np.testing.assert_allclose(
            report.slacks["C4"],
            (perf["user_rate"] - config.R_embb_min) / config.R_embb_min,
            rtol=1e-12)

    def test_sinr_floor_alone_can_fail(self):
        # single interference-free device: scale its power until the SINR
        # sits just under the floor while the rate floor (SINR-threshold
        # spreading margin) and the user floor still hold
        from cfcoex.channel_stats import compute_stats
        from cfcoex.rates import MomentSet
        cfg = desk_scenario(K_u=1, K_d=1, tau_p=2, tau_u=99)
        found = False
        for inst in range(10):
            dep = generate_deployment(cfg, inst)
            m = MomentSet.compute(compute_stats(dep, cfg), dep, cfg)
            base = upc(cfg)
            if np.min(mmtc_sinr(m, base)) < cfg.S_min:
                continue
            lo, hi = 0.0, 1.0
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                theta = PowerVector(p=base.p, q=mid * base.q)
                if np.min(mmtc_sinr(m, theta)) > 0.9 * cfg.S_min:
                    hi = mid
                else:
                    lo = mid
            theta = PowerVector(p=base.p, q=lo * base.q)
            report = mark_feasible(theta, m, cfg)
            if report.violated == ["C5"]:
                found = True
                break
        assert found, "no instance produced an isolated SINR-floor failure"

    def test_regime_changes_only_device_rate(self, desk_instance):
        config, _, _, m = desk_instance
        theta = upc(config)
        fbl = mark_feasible(theta, m, config, regime="fbl")
        sh = mark_feasible(theta, m, config, regime="shannon")
        assert np.all(sh.slacks["C3"] >= fbl.slacks["C3"])
        np.testing.assert_array_equal(sh.slacks["C4"], fbl.slacks["C4"])
        np.testing.assert_array_equal(sh.slacks["C5"], fbl.slacks["C5"])

    def test_tolerance_is_respected(self, desk_instance):
        config, _, _, m = desk_instance
        theta = PowerVector(
            p=np.full(config.K_u, config.P_u_max * (1 + 1e-8)),
            q=np.full(config.K_d, config.Q_d_max / 2))
        slightly_over = mark_feasible(theta, m, config)
        assert "C2" not in slightly_over.violated  # within default tol
        strict = mark_feasible(theta, m, config, tol=1e-12)
        assert "C2" in strict.violated
