"""MMSE estimation statistics under pilot contamination."""

import dataclasses

import numpy as np
import pytest

from cfcoex.channel_stats import compute_stats, pilot_match
from cfcoex.scenario import ScenarioConfig, generate_deployment

from conftest import desk_scenario


def orthogonal_scenario(**overrides):
    """Desk scenario with one pilot per terminal (no contamination)."""
    return desk_scenario(tau_p=5, **overrides)


class TestPilotMatch:
    def test_indicator_matrix(self):
        m = pilot_match([0, 1, 0], [1, 0])
        np.testing.assert_array_equal(m, [[0, 1], [1, 0], [0, 1]])

    def test_orthonormal_self_correlation(self):
        m = pilot_match([0, 1, 2], [0, 1, 2])
        np.testing.assert_array_equal(m, np.eye(3))


class TestObservationVariance:
    def test_positive_and_above_noise(self, desk_instance):
        config, dep, stats, _ = desk_instance
        assert np.all(stats.c_user > config.noise_power * (1 - 1e-12))
        assert np.all(stats.beta_bar > config.noise_power * (1 - 1e-12))

    def test_orthogonal_pilots_single_terms(self):
        cfg = orthogonal_scenario()
        dep = generate_deployment(cfg, 0)
        stats = compute_stats(dep, cfg)
        # user observation holds only the own link plus noise
        np.testing.assert_allclose(
            stats.c_user, cfg.eta_u * dep.alpha + cfg.noise_power, rtol=1e-12)
        # device observation likewise
        np.testing.assert_allclose(
            stats.beta_bar, cfg.zeta_d * dep.beta + cfg.noise_power,
            rtol=1e-12)
        # no cross-class or cross-device leakage
        assert np.all(stats.alpha_tilde == 0.0)
        off = stats.beta_tilde.copy()
        for d in range(cfg.K_d):
            off[:, d, d] = 0.0
        assert np.all(off == 0.0)

    def test_shared_pilot_adds_interferer_gain(self, desk_instance):
        config, dep, stats, _ = desk_instance
        # desk scenario has tau_p=3 for 5 terminals: at least one collision
        match_uu = pilot_match(dep.pilot_of_user, dep.pilot_of_user)
        match_du = pilot_match(dep.pilot_of_device, dep.pilot_of_user)
        expected = (config.eta_u * dep.alpha @ match_uu
                    + config.zeta_d * dep.beta @ match_du
                    + config.noise_power)
        np.testing.assert_allclose(stats.c_user, expected, rtol=1e-12)
        assert match_uu.sum() + match_du.sum() > config.K_u  # collisions exist

    def test_contamination_never_decreases_variance(self, desk_instance):
        config, dep, stats, _ = desk_instance
        # weakening any co-pilot interferer can only lower c
        shrunk = dataclasses.replace(dep, beta=dep.beta * 0.5)
        c_shrunk = compute_stats(shrunk, config).c_user
        assert np.all(c_shrunk <= stats.c_user + 1e-30)


class TestMmseGains:
    def test_user_gain_in_unit_interval(self, desk_instance):
        _, _, stats, _ = desk_instance
        assert np.all(stats.a_user > 0.0)
        assert np.all(stats.a_user <= 1.0)

    def test_device_gain_bounded_by_training_ratio(self, desk_instance):
        config, _, stats, _ = desk_instance
        # zeta * beta <= beta_bar, so the analogous device ratio is <= 1
        assert np.all(stats.beta_hat > 0.0)
        assert np.all(config.zeta_d * stats.beta_hat <= 1.0 + 1e-12)

    def test_noiseless_orthogonal_gain_is_one(self):
        cfg = orthogonal_scenario(noise_density=-400.0)
        dep = generate_deployment(cfg, 0)
        stats = compute_stats(dep, cfg)
        np.testing.assert_allclose(stats.a_user, 1.0, atol=1e-9)
        np.testing.assert_allclose(
            cfg.zeta_d * stats.beta_hat, 1.0, atol=1e-9)

    def test_single_link_closed_form(self):
        # one AP, one user, one device on orthogonal pilots: a = eta*al/c
        cfg = ScenarioConfig(M=1, L=1, K_u=1, K_d=1, M_s=1, N=7, tau_p=2)
        dep = generate_deployment(cfg, 0)
        stats = compute_stats(dep, cfg)
        al = dep.alpha[0, 0]
        c = cfg.eta_u * al + cfg.noise_power
        assert stats.c_user[0, 0] == pytest.approx(c, rel=1e-14)
        assert stats.a_user[0, 0] == pytest.approx(cfg.eta_u * al / c,
                                                   rel=1e-14)

    def test_more_training_power_helps(self, desk_instance):
        config, dep, stats, _ = desk_instance
        cfg_hi = dataclasses.replace(config, eta_u=4 * config.eta_u)
        hi = compute_stats(dep, cfg_hi)
        # own-signal share of the observation can only grow in eta when the
        # contaminating terms include the same factor or stay fixed
        assert np.all(hi.a_user >= stats.a_user - 1e-12)
