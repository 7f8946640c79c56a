"""Closed-form effective SINRs, finite-blocklength rates, and energy efficiency.

The combined uplink statistic of each terminal decomposes, after averaging
over small-scale fading, into a deterministic signal gain plus variance-type
self/cross interference coefficients ("moments"). Broadband users are
maximum-ratio combined per PRB; machine-type devices additionally despread
over N PRBs, which shows up as N-dependent prefactors on their moments.
All moments are exact under i.i.d. Rayleigh antennas, orthonormal index
pilots, and unit-modulus spreading chips.
"""

import math
from dataclasses import dataclass

import numpy as np

from .channel_stats import pilot_match

LOG2E = math.log2(math.e)


# ---------------------------------------------------------------------------
# power vectors and energy-efficiency parameters
# ---------------------------------------------------------------------------

@dataclass
class PowerVector:
    """Transmit powers in watts: p for users, q for devices."""

    p: np.ndarray  # (K_u,)
    q: np.ndarray  # (K_d,)

    def as_array(self):
        return np.concatenate([np.asarray(self.p, float),
                               np.asarray(self.q, float)])

    @classmethod
    def from_array(cls, arr, k_u):
        arr = np.asarray(arr, dtype=float)
        return cls(p=arr[:k_u].copy(), q=arr[k_u:].copy())


@dataclass
class EEParams:
    """Constants of the device energy-efficiency objective.

    The prelog factors convert spectral efficiency (bits/s/Hz) to rate
    (bits/s): users transmit one symbol per uplink sample, devices one
    symbol per N samples. Resource-split comparisons override them.
    """

    psi: float            # uplink symbol rate, Hz
    N: int                # spreading factor
    v_d: np.ndarray       # (K_d,) finite-blocklength back-off factors
    mu_d: float           # amplifier inefficiency
    Theta_d: float        # static consumption, W
    user_prelog: float    # bits/s per user bit/s/Hz
    device_prelog: float  # bits/s per device bit/s/Hz

    @classmethod
    def from_config(cls, config):
        v = (LOG2E / math.sqrt(config.n_d)) * qfunc_inv(config.PER_d)
        return cls(psi=config.psi, N=config.N,
                   v_d=np.full(config.K_d, v),
                   mu_d=config.mu_d, Theta_d=config.Theta_d,
                   user_prelog=config.psi,
                   device_prelog=config.psi / config.N)


def qfunc_inv(p, tol=1e-13):
    """Inverse Gaussian tail function by bisection (|x error| < tol)."""
    if not 0.0 < p < 1.0:
        raise ValueError("tail probability must lie in (0, 1)")
    lo, hi = -13.0, 13.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if 0.5 * math.erfc(mid / math.sqrt(2.0)) > p:
            lo = mid  # tail still too heavy, root lies right of mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# closed-form moments
# ---------------------------------------------------------------------------

@dataclass
class MomentSet:
    """Deterministic coefficients of both effective SINR expressions.

    User side (per PRB, MRC): delta is the coherent signal gain, upsilon the
    self-interference from channel-gain fluctuation, kappa/varkappa the
    user/device cross couplings (kappa diagonal unused, stored as 0), xi the
    noise gain. Device side (after despreading over N PRBs): lam is the
    coherent signal gain (the stored field name shortens "lambda"), nu the
    self term, eps_dd/eps_du the device/user couplings (eps_dd diagonal 0),
    chi the noise gain.
    """

    delta: np.ndarray     # (K_u,)
    upsilon: np.ndarray   # (K_u,)
    kappa: np.ndarray     # (K_u, K_u)
    varkappa: np.ndarray  # (K_u, K_d)
    xi: np.ndarray        # (K_u,)
    lam: np.ndarray       # (K_d,)
    nu: np.ndarray        # (K_d,)
    eps_dd: np.ndarray    # (K_d, K_d)
    eps_du: np.ndarray    # (K_d, K_u)
    chi: np.ndarray       # (K_d,)

    @classmethod
    def compute(cls, stats, dep, config):
        return cls(*embb_moments(stats, dep, config),
                   *mmtc_moments(stats, dep, config))


def embb_moments(stats, dep, config):
    """User-side moment coefficients (delta, upsilon, kappa, varkappa, xi).

    The MMSE filter scalar alpha/c is recovered from the stored gain so that
    the leading training-power factors come from `config`; with a matching
    config this is the identical expression.
    """
    eta = config.eta_u
    zeta = config.zeta_d
    L = config.L
    sigma2 = stats.noise_power
    alpha = dep.alpha
    beta = dep.beta
    a = dep.a_mask.astype(float)

    mmse = stats.a_user / stats.eta_u          # (M,K_u) filter scalar alpha/c
    w = a * mmse                               # serving-masked filter gains
    match_uu = pilot_match(dep.pilot_of_user, dep.pilot_of_user)
    match_ud = pilot_match(dep.pilot_of_user, dep.pilot_of_device)

    coh_u = L * np.einsum("mu,mu->u", w, alpha)          # sum_m tr(filter x cov)
    delta = eta ** 2 * coh_u ** 2
    upsilon = eta * L * np.einsum("mu,mu->u", w, alpha ** 2)
    xi = eta * sigma2 * coh_u

    cross_uu = L * np.einsum("mu,mk->uk", w, alpha)      # (K_u,K_u)
    kappa = (eta * L * np.einsum("mu,mu,mk->uk", w, alpha, alpha)
             + eta ** 2 * match_uu * cross_uu ** 2)
    np.fill_diagonal(kappa, 0.0)

    cross_ud = L * np.einsum("mu,md->ud", w, beta)       # (K_u,K_d)
    varkappa = (eta * L * np.einsum("mu,mu,md->ud", w, alpha, beta)
                + eta * zeta * match_ud * cross_ud ** 2)

    return delta, upsilon, kappa, varkappa, xi


def mmtc_moments(stats, dep, config):
    """Device-side moment coefficients (lam, nu, eps_dd, eps_du, chi).

    All despreading-gain prefactors scale with the spreading factor N except
    the coherent device-device pilot term, which the despreader cannot
    average out.
    """
    N = float(config.N)
    L = float(config.L)
    eta = config.eta_u
    zeta = config.zeta_d
    sigma2 = stats.noise_power
    alpha = dep.alpha
    beta = dep.beta
    b = dep.b_mask.astype(float)

    bh = stats.beta_hat                                   # (M,K_d)
    bt_own = np.einsum("mdd->md", stats.beta_tilde)       # own pilot gain
    bb = stats.beta_bar
    match_dd = pilot_match(dep.pilot_of_device, dep.pilot_of_device)
    match_ud = pilot_match(dep.pilot_of_user, dep.pilot_of_device)

    coh_d = np.einsum("md,md->d", b, bh ** 2 * bt_own * (bb + L * bt_own))
    lam = N ** 2 * L ** 2 * coh_d ** 2

    nu_core = ((L + 1.0) * ((L + 1.0) * bt_own * (L * bt_own + 4.0 * bb)
                            + 2.0 * bb ** 2)
               - L * (bb + L * bt_own) ** 2)
    nu = N * L * np.einsum("md,md->d", b, bh ** 4 * bt_own ** 2 * nu_core)

    chi = (N * L * (L + 1.0) * zeta * sigma2
           * np.einsum("md,md->d", b,
                       bh ** 4 * bt_own * bb * ((L + 1.0) * bt_own + bb)))

    # Device-device coupling: despread-averaged part (per-AP) plus the
    # coherent pilot-sharing part that survives despreading un-attenuated.
    w4 = b * bh ** 4 * bt_own                             # (M,K_d) at index d
    quad = ((L + 1.0) * bb ** 2)[:, :, None] \
        + ((L + 1.0) ** 2 * bb)[:, :, None] * (bt_own[:, :, None]
                                               + stats.beta_tilde) \
        + (L * (2.0 * L + 1.0) * bt_own)[:, :, None] * stats.beta_tilde
    eps_dd = N * L * zeta * np.einsum("md,mdk->dk", w4,
                                      beta[:, None, :] * quad)
    coh_dk = np.einsum("md,mk->dk", b * bh ** 2 * bt_own, beta)
    eps_dd = eps_dd + L ** 4 * zeta ** 2 * match_dd * coh_dk ** 2
    np.fill_diagonal(eps_dd, 0.0)

    quad_u = ((L + 1.0) * bb ** 2)[:, :, None] \
        + ((L + 1.0) ** 2 * bb)[:, :, None] * (bt_own[:, :, None]
                                               + stats.alpha_tilde) \
        + (L * (2.0 * L + 1.0) * bt_own)[:, :, None] * stats.alpha_tilde
    eps_du = N * L * zeta * np.einsum("md,mdu->du", w4,
                                      alpha[:, None, :] * quad_u)
    coh_du = np.einsum("md,mu->du", b * bh ** 2 * bt_own, alpha)
    eps_du = eps_du + N * L ** 4 * zeta * eta * match_ud.T * coh_du ** 2

    return lam, nu, eps_dd, eps_du, chi


# ---------------------------------------------------------------------------
# SINRs, rates, energy efficiency
# ---------------------------------------------------------------------------

def embb_sinr(moments, theta):
    """Per-user effective SINR at powers theta (PowerVector)."""
    p, q = np.asarray(theta.p, float), np.asarray(theta.q, float)
    den = (moments.upsilon * p + moments.kappa @ p
           + moments.varkappa @ q + moments.xi)
    return moments.delta * p / den


def mmtc_denominator(moments, theta):
    """Interference-plus-noise part of the device SINR (affine in powers)."""
    p, q = np.asarray(theta.p, float), np.asarray(theta.q, float)
    return moments.nu * q + moments.eps_dd @ q + moments.eps_du @ p + moments.chi


def mmtc_sinr(moments, theta):
    """Per-device effective SINR after despreading."""
    q = np.asarray(theta.q, float)
    return moments.lam * q / mmtc_denominator(moments, theta)


def shannon_rate(sinr):
    """Spectral efficiency, bits/s/Hz."""
    return np.log2(1.0 + np.asarray(sinr, float))


def dispersion(sinr):
    """Square-root channel dispersion sqrt(2x/(1+x)) of the normal
    approximation."""
    x = np.asarray(sinr, float)
    return np.sqrt(2.0 * x / (1.0 + x))


def fbl_rate(sinr, v_d):
    """Finite-blocklength spectral efficiency, clamped at zero, bits/s/Hz."""
    return np.maximum(0.0, shannon_rate(sinr) - np.asarray(v_d) * dispersion(sinr))


def energy_efficiency(theta, device_rates, params):
    """Per-device energy efficiency, bits/J. `device_rates` in bits/s/Hz."""
    q = np.asarray(theta.q, float)
    return params.device_prelog * np.asarray(device_rates) / (
        params.mu_d * q + params.Theta_d)


def terminal_performance(theta, moments, config, regime="fbl", params=None):
    """Per-terminal SINRs, rates (bits/s), and device EE (bits/J) at theta."""
    if params is None:
        params = EEParams.from_config(config)
    gamma = embb_sinr(moments, theta)
    rho = mmtc_sinr(moments, theta)
    if regime == "fbl":
        se = fbl_rate(rho, params.v_d)
    elif regime == "shannon":
        se = shannon_rate(rho)
    else:
        raise ValueError(f"unknown regime '{regime}'")
    return {"user_sinr": gamma,
            "user_rate": params.user_prelog * shannon_rate(gamma),
            "device_sinr": rho,
            "device_rate": params.device_prelog * se,
            "device_ee": energy_efficiency(theta, se, params)}


def fbl_sinr_threshold(se_target, v, tol=1e-12):
    """Smallest SINR whose finite-blocklength spectral efficiency reaches
    `se_target` (bits/s/Hz), found by bisection on the increasing branch.

    The back-off curve dips below zero near the origin and turns increasing
    at 2x(1+x) = (v ln 2)^2, so the crossing above a positive target is
    unique.
    """
    if se_target <= 0.0:
        raise ValueError("spectral-efficiency target must be positive")
    if v < 0.0:
        raise ValueError("dispersion factor must be nonnegative")
    vln2 = v * math.log(2.0)
    lo = 0.5 * (-1.0 + math.sqrt(1.0 + 2.0 * vln2 ** 2))  # stationary point
    hi = max(1.0, 2.0 * lo)
    while fbl_rate(hi, v) < se_target:
        hi *= 2.0
        if hi > 1e30:
            raise ValueError("spectral-efficiency target unreachable")
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if fbl_rate(mid, v) < se_target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def constraint_thresholds(config, params, regime):
    """Linear-form SINR floors: the scalar user floor gamma_th and the
    per-device rate floor expressed as equivalent SINRs rho_th (K_d,)."""
    gamma_th = 2.0 ** (config.R_embb_min / params.user_prelog) - 1.0
    se_target = config.R_mmtc_min / params.device_prelog
    if regime == "shannon":
        rho_th = np.full(len(params.v_d), 2.0 ** se_target - 1.0)
    elif regime == "fbl":
        by_v = {v: fbl_sinr_threshold(se_target, v)
                for v in np.unique(params.v_d)}
        rho_th = np.array([by_v[v] for v in params.v_d])
    else:
        raise ValueError(f"unknown regime '{regime}'")
    return gamma_th, rho_th
