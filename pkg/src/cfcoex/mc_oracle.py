"""Monte-Carlo oracle for the closed-form moment coefficients.

Simulates the literal receive chain — pilot observations with contamination,
per-link scalar MMSE estimation, maximum-ratio combining, and time-frequency
despreading with real m-sequence signatures — and averages the squared
statistics so the analytic moments can be validated end to end.
"""

from dataclasses import dataclass

import numpy as np

from .channel_stats import compute_stats, pilot_match
from .scenario import rng_for

# One primitive feedback polynomial per register length (taps are the powers
# of the monomials beside x^0); any non-primitive replacement is caught by the
# period check at generation time.
PRIMITIVE_TAPS = {
    2: (2, 1),
    3: (3, 1),
    4: (4, 1),
    5: (5, 2),
    6: (6, 1),
    7: (7, 1),
    8: (8, 4, 3, 2),
    9: (9, 4),
    10: (10, 3),
}


@dataclass
class PnSequence:
    """One unit-energy spreading signature (chips are +-1/sqrt(N))."""

    chips: np.ndarray     # (N,) float
    register_length: int  # n with N = 2^n - 1 (0 for the degenerate N=1)
    shift: int            # cyclic shift distinguishing devices


def gen_mseq(n, taps=None, shift=0):
    """Maximum-length sequence from an n-bit LFSR, bipolar unit-energy chips.

    Raises ValueError if the feedback taps are not primitive (period check)
    or n is outside the supported 2..10 range.
    """
    if not 2 <= n <= 10:
        raise ValueError("register length n must lie in 2..10")
    if taps is None:
        taps = PRIMITIVE_TAPS[n]
    period = (1 << n) - 1
    state = [1] * n
    start = tuple(state)
    bits = []
    for step in range(period):
        bits.append(state[-1])
        fb = 0
        for t in taps:
            fb ^= state[t - 1]
        state = [fb] + state[:-1]
        if tuple(state) == start and step + 1 < period:
            raise ValueError(
                f"taps {taps} are not primitive: period {step + 1} < {period}")
    if tuple(state) != start:
        raise ValueError(f"taps {taps} are not primitive: no return to seed")
    chips = (1.0 - 2.0 * np.array(bits, dtype=float)) / np.sqrt(period)
    chips = np.roll(chips, shift)
    return PnSequence(chips=chips, register_length=n, shift=shift % period)


def signature_matrix(config):
    """Unit-energy signatures for all devices, shape (K_d, N).

    Distinct devices get distinct cyclic shifts (d mod N); the closed forms
    assume distinct signatures, so configs with 1 < N < K_d degrade them.
    N=1 is the degenerate no-spreading case (chip 1.0 for everyone).
    """
    N = config.N
    if N == 1:
        return np.ones((config.K_d, 1))
    n = int(round(np.log2(N + 1)))
    if (1 << n) - 1 != N:
        raise ValueError(f"N={N} is not a supported m-sequence length 2^n-1")
    return np.stack([gen_mseq(n, shift=d % N).chips for d in range(config.K_d)])


# ---------------------------------------------------------------------------
# channel and estimate sampling
# ---------------------------------------------------------------------------

@dataclass
class ChannelDraw:
    """A block of i.i.d. small-scale fading realizations (leading draw axis)."""

    h: np.ndarray            # (n, M, K_u, N, L) user channels
    g: np.ndarray            # (n, M, K_d, N, L) device channels
    pilot_noise: np.ndarray  # (n, M, N, L, tau_p) projected pilot-block noise


def _crandn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) \
        / np.sqrt(2.0)


def sample_channels(dep, config, rng, n_draws=1):
    """Draw i.i.d. circular Gaussian channels, per-PRB independent."""
    shape_u = (n_draws, config.M, config.K_u, config.N, config.L)
    shape_d = (n_draws, config.M, config.K_d, config.N, config.L)
    h = _crandn(rng, shape_u) * np.sqrt(dep.alpha)[None, :, :, None, None]
    g = _crandn(rng, shape_d) * np.sqrt(dep.beta)[None, :, :, None, None]
    pn = _crandn(rng, (n_draws, config.M, config.N, config.L, config.tau_p)) \
        * np.sqrt(config.noise_power)
    return ChannelDraw(h=h, g=g, pilot_noise=pn)


def estimate_channels(draw, dep, config, stats=None):
    """Scalar-MMSE channel estimates from contaminated pilot observations.

    Terminals sharing a pilot index see each other's channels and the very
    same projected noise column in their least-squares observations.
    """
    if stats is None:
        stats = compute_stats(dep, config)
    eta, zeta = config.eta_u, config.zeta_d
    match_uu = pilot_match(dep.pilot_of_user, dep.pilot_of_user)
    match_du = pilot_match(dep.pilot_of_device, dep.pilot_of_user)
    match_dd = pilot_match(dep.pilot_of_device, dep.pilot_of_device)
    match_ud = pilot_match(dep.pilot_of_user, dep.pilot_of_device)

    noise_u = np.moveaxis(draw.pilot_noise[..., dep.pilot_of_user], -1, 2)
    obs_u = (np.sqrt(eta) * np.einsum("xmknl,ku->xmunl", draw.h, match_uu)
             + np.sqrt(zeta) * np.einsum("xmdnl,du->xmunl", draw.g, match_du)
             + noise_u)
    h_hat = np.sqrt(eta) * (stats.a_user / eta)[None, :, :, None, None] * obs_u

    noise_d = np.moveaxis(draw.pilot_noise[..., dep.pilot_of_device], -1, 2)
    obs_d = (np.sqrt(zeta) * np.einsum("xmknl,kd->xmdnl", draw.g, match_dd)
             + np.sqrt(eta) * np.einsum("xmunl,ud->xmdnl", draw.h, match_ud)
             + noise_d)
    g_hat = np.sqrt(zeta) * stats.beta_hat[None, :, :, None, None] * obs_d

    return h_hat, g_hat


def _chunk_sizes(n_draws, chunk):
    sizes = [chunk] * (n_draws // chunk)
    if n_draws % chunk:
        sizes.append(n_draws % chunk)
    return sizes


# ---------------------------------------------------------------------------
# empirical user-side moments
# ---------------------------------------------------------------------------

def empirical_embb_moments(dep, config, n_draws, rng=None, chunk=None):
    """Monte-Carlo estimates of the user-side moments.

    Averages over draws and PRBs; the signal term is split into squared mean
    (coherent gain) and variance (self interference). Refuses fewer than 1e3
    draws — below that the estimates are noise.
    """
    if n_draws < 1000:
        raise ValueError("n_draws below 1e3 gives meaningless estimates")
    if rng is None:
        rng = rng_for(config.seed, 0)
    if chunk is None:
        # keep the per-chunk channel tensors around ~1e7 entries
        per_draw = config.M * (config.K_u + config.K_d) * config.N * config.L
        chunk = min(n_draws, max(1, int(1e7 / per_draw)))
    stats = compute_stats(dep, config)
    a = dep.a_mask.astype(float)
    sigma2 = config.noise_power

    cnt = 0
    sum_sig = np.zeros(config.K_u, dtype=complex)
    sum_sig2 = np.zeros(config.K_u)
    sum_uu = np.zeros((config.K_u, config.K_u))
    sum_ud = np.zeros((config.K_u, config.K_d))
    sum_noise = np.zeros(config.K_u)

    for size in _chunk_sizes(n_draws, chunk):
        draw = sample_channels(dep, config, rng, size)
        h_hat, _ = estimate_channels(draw, dep, config, stats)
        w = _crandn(rng, (size, config.M, config.N, config.L)) * np.sqrt(sigma2)

        sig = np.einsum("mu,xmunl,xmunl->xun", a, h_hat.conj(), draw.h)
        cross_uu = np.einsum("mu,xmunl,xmknl->xukn", a, h_hat.conj(), draw.h)
        cross_ud = np.einsum("mu,xmunl,xmdnl->xudn", a, h_hat.conj(), draw.g)
        noise = np.einsum("mu,xmunl,xmnl->xun", a, h_hat.conj(), w)

        cnt += size * config.N
        sum_sig += sig.sum(axis=(0, 2))
        sum_sig2 += (np.abs(sig) ** 2).sum(axis=(0, 2))
        sum_uu += (np.abs(cross_uu) ** 2).sum(axis=(0, 3))
        sum_ud += (np.abs(cross_ud) ** 2).sum(axis=(0, 3))
        sum_noise += (np.abs(noise) ** 2).sum(axis=(0, 2))

    mean_sig = sum_sig / cnt
    delta = np.abs(mean_sig) ** 2
    upsilon = sum_sig2 / cnt - delta
    kappa = sum_uu / cnt
    np.fill_diagonal(kappa, 0.0)
    varkappa = sum_ud / cnt
    xi = sum_noise / cnt
    return delta, upsilon, kappa, varkappa, xi


# ---------------------------------------------------------------------------
# empirical device-side moments
# ---------------------------------------------------------------------------

def empirical_mmtc_moments(dep, config, n_draws, rng=None, chunk=None):
    """Monte-Carlo estimates of the device-side moments via the full chain:
    estimate, combine per PRB, weight by the combined gain, despread with the
    device's own signature, and aggregate over its serving APs.

    The user-interference moment sums per-PRB squared couplings, which is the
    exact average over the independent unit-power user symbols.
    """
    if n_draws < 1000:
        raise ValueError("n_draws below 1e3 gives meaningless estimates")
    if rng is None:
        rng = rng_for(config.seed, 0)
    if chunk is None:
        # keep the (x, M, K_d, K_d, N) intermediate around ~2e7 entries
        chunk = max(1, int(2e7 / (config.M * config.K_d ** 2 * config.N)))
    stats = compute_stats(dep, config)
    b = dep.b_mask.astype(float)
    sigma2 = config.noise_power

    # Unit-modulus chip waveform: signatures are stored unit-energy, the
    # transmitted chips have unit modulus.
    wave = signature_matrix(config) * np.sqrt(config.N)    # (K_d, N)
    wave_dk = wave.conj()[:, None, :] * wave[None, :, :]   # (K_d, K_d, N)

    cnt = 0
    sum_sig = np.zeros(config.K_d)
    sum_sig2 = np.zeros(config.K_d)
    sum_dd = np.zeros((config.K_d, config.K_d))
    sum_du = np.zeros((config.K_d, config.K_u))
    sum_noise = np.zeros(config.K_d)

    for size in _chunk_sizes(n_draws, chunk):
        draw = sample_channels(dep, config, rng, size)
        _, g_hat = estimate_channels(draw, dep, config, stats)
        w = _crandn(rng, (size, config.M, config.N, config.L)) * np.sqrt(sigma2)

        inner = np.einsum("xmdnl,xmdnl->xmdn", g_hat.conj(), draw.g)
        own = np.einsum("md,xmdn->xd", b, np.abs(inner) ** 2)

        cross_dd = np.einsum("xmdnl,xmknl->xmdkn", g_hat.conj(), draw.g)
        j_dd = np.einsum("md,dkn,xmdkn->xdk", b, wave_dk,
                         inner.conj()[:, :, :, None, :] * cross_dd)

        cross_du = np.einsum("xmdnl,xmunl->xmdun", g_hat.conj(), draw.h)
        j_du = np.einsum("md,xmdun->xdun", b,
                         inner.conj()[:, :, :, None, :] * cross_du) \
            * wave.conj()[None, :, None, :]

        cross_w = np.einsum("xmdnl,xmnl->xmdn", g_hat.conj(), w)
        j_w = np.einsum("md,dn,xmdn->xd", b, wave.conj(),
                        inner.conj() * cross_w)

        cnt += size
        sum_sig += own.sum(axis=0)
        sum_sig2 += (own ** 2).sum(axis=0)
        sum_dd += (np.abs(j_dd) ** 2).sum(axis=0)
        sum_du += (np.abs(j_du) ** 2).sum(axis=(0, 3))
        sum_noise += (np.abs(j_w) ** 2).sum(axis=0)

    mean_sig = sum_sig / cnt
    lam = mean_sig ** 2
    nu = sum_sig2 / cnt - lam
    eps_dd = sum_dd / cnt
    np.fill_diagonal(eps_dd, 0.0)
    eps_du = sum_du / cnt
    chi = sum_noise / cnt
    return lam, nu, eps_dd, eps_du, chi
