"""Channel estimation statistics under pilot contamination.

Every AP forms per-PRB MMSE estimates of its links from shared pilot
observations. With i.i.d. antennas the per-link MMSE filter collapses to a
scalar, so everything needed downstream is a handful of per-link variance
and gain matrices: the observation variance, the MMSE shrinkage gain, and
the pilot-weighted cross gains that quantify contamination.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class EstimationStats:
    """Per-link second-order estimation quantities for one deployment.

    beta_tilde[m, d, k] is device k's fading at AP m weighted by the squared
    pilot correlation with device d's pilot (zero unless the pilots match);
    alpha_tilde[m, d, u] is the analogous user-into-device weight.
    """

    c_user: np.ndarray       # (M, K_u) user pilot-observation variance per antenna
    a_user: np.ndarray       # (M, K_u) MMSE gain eta_u*alpha/c, in (0, 1]
    beta_hat: np.ndarray     # (M, K_d) device MMSE ratio beta/beta_bar
    beta_tilde: np.ndarray   # (M, K_d, K_d) device-to-device contamination gains
    alpha_tilde: np.ndarray  # (M, K_d, K_u) user-to-device contamination gains
    beta_bar: np.ndarray     # (M, K_d) device pilot-observation variance
    noise_power: float       # W per antenna
    eta_u: float             # training power the stats were built with, W
    zeta_d: float            # device training power, W


def pilot_match(pilots_a, pilots_b):
    """Squared pilot cross-correlations for index-assigned orthonormal pilots:
    1.0 where the indices coincide, 0.0 elsewhere. Shape (len_a, len_b)."""
    a = np.asarray(pilots_a)[:, None]
    b = np.asarray(pilots_b)[None, :]
    return (a == b).astype(float)


def compute_stats(dep, config):
    """Estimation statistics for every link of a deployment."""
    sigma2 = config.noise_power
    eta = config.eta_u
    zeta = config.zeta_d

    match_uu = pilot_match(dep.pilot_of_user, dep.pilot_of_user)    # (K_u,K_u)
    match_du = pilot_match(dep.pilot_of_device, dep.pilot_of_user)  # (K_d,K_u)
    match_dd = pilot_match(dep.pilot_of_device, dep.pilot_of_device)
    match_ud = pilot_match(dep.pilot_of_user, dep.pilot_of_device)  # (K_u,K_d)

    # Observation variance: everyone sharing the pilot lands in the same
    # projected observation, plus thermal noise.
    c_user = eta * dep.alpha @ match_uu + zeta * dep.beta @ match_du + sigma2
    a_user = eta * dep.alpha / c_user

    beta_tilde = zeta * dep.beta[:, None, :] * match_dd[None, :, :]
    alpha_tilde = eta * dep.alpha[:, None, :] * match_ud.T[None, :, :]
    beta_bar = beta_tilde.sum(axis=2) + alpha_tilde.sum(axis=2) + sigma2
    beta_hat = dep.beta / beta_bar

    return EstimationStats(c_user=c_user, a_user=a_user, beta_hat=beta_hat,
                           beta_tilde=beta_tilde, alpha_tilde=alpha_tilde,
                           beta_bar=beta_bar, noise_power=sigma2,
                           eta_u=eta, zeta_d=zeta)
