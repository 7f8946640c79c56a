"""Scenario configuration and random deployment generation.

Access points and terminals are dropped uniformly over a square service
area, large-scale fading follows a micro-urban NLOS power law at 2 GHz,
each terminal is served by its strongest access points, and pilots are
reused in a balanced random fashion. All randomness is drawn from numpy
Generator streams keyed by (seed, instance index) so that batch runs are
reproducible sample by sample.
"""

import csv
import hashlib
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

# Micro-urban NLOS power law at f_c = 2 GHz (3D distance, dB).
PATHLOSS_SLOPE_DB = 36.7
PATHLOSS_OFFSET_DB = 22.7
CARRIER_FREQ_HZ = 2.0e9


class ConfigError(ValueError):
    """Raised on inconsistent scenario parameters or malformed config files."""


def dbm_to_watt(x_dbm):
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watt_to_dbm(x_watt):
    return 10.0 * np.log10(x_watt) + 30.0


def rng_for(seed, index):
    """Independent Generator for (seed, instance index); merge-order free."""
    return np.random.default_rng([seed, index])


def pathloss_db(d3d_m):
    """Distance (3D, meters) to path loss in dB."""
    d = np.maximum(np.asarray(d3d_m, dtype=float), 1.0)  # clamp below 1 m
    return (PATHLOSS_SLOPE_DB * np.log10(d) + PATHLOSS_OFFSET_DB
            + 26.0 * np.log10(CARRIER_FREQ_HZ / 1e9))


@dataclass
class ScenarioConfig:
    """Full parameter set of one coexistence scenario.

    Powers are stored in watts; dBm appears only at the file/CLI boundary.
    Fields left as None are derived in __post_init__ from the others.
    """

    M: int = 10                 # access points
    L: int = 4                  # antennas per access point
    K_u: int = 2                # broadband users
    K_d: int = 10               # machine-type devices
    M_s: int = 5                # serving APs per terminal (<= M)
    N: int = 255                # spreading factor = PRBs per device symbol
    area_side: float = 250.0    # service area side, m
    h_ap: float = 10.0          # AP height, m
    h_term: float = 1.65        # terminal height, m
    P_u_max: float = 0.1        # user power budget, W (20 dBm)
    Q_d_max: float = 0.01       # device power budget, W (10 dBm)
    eta_u: float = None         # user training power, W (default: budget)
    zeta_d: float = None        # device training power, W (default: budget)
    noise_density: float = -174.0  # thermal noise density, dBm/Hz
    bandwidth: float = 20e6     # Hz
    tau_c: int = 200            # coherence block length, samples
    tau_p: int = None           # pilot samples (default ceil((K_u+K_d)/2))
    tau_u: int = None           # uplink data samples (default floor((tau_c-tau_p)/2))
    R_embb_min: float = 1e6     # per-user rate floor, bits/s
    R_mmtc_min: float = 1e4     # per-device rate floor, bits/s
    S_min: float = 1.0          # device SINR floor, linear (0 dB)
    n_d: int = 100              # short-packet blocklength, symbols
    PER_d: float = 1e-3         # target packet error rate
    mu_d: float = 2.5           # device amplifier inefficiency
    Theta_d: float = 0.1        # device static consumption, W
    shadow_std_db: float = 0.0  # log-normal shadowing std, dB (0 = off)
    seed: int = 1

    def __post_init__(self):
        if self.eta_u is None:
            self.eta_u = self.P_u_max
        if self.zeta_d is None:
            self.zeta_d = self.Q_d_max
        if self.tau_p is None:
            self.tau_p = math.ceil((self.K_u + self.K_d) / 2)
        if self.tau_u is None:
            self.tau_u = (self.tau_c - self.tau_p) // 2
        self.validate()

    def validate(self):
        if self.M < 1 or self.L < 1 or self.K_u < 1 or self.K_d < 1:
            raise ConfigError("M, L, K_u, K_d must all be >= 1")
        if not 1 <= self.M_s <= self.M:
            raise ConfigError(f"M_s={self.M_s} must satisfy 1 <= M_s <= M={self.M}")
        if self.N < 1:
            raise ConfigError("spreading factor N must be >= 1")
        if self.tau_p < 1 or self.tau_u < 1:
            raise ConfigError("tau_p and tau_u must be >= 1")
        if self.tau_p + self.tau_u > self.tau_c:
            raise ConfigError("tau_p + tau_u exceeds the coherence block")
        for name in ("P_u_max", "Q_d_max", "eta_u", "zeta_d", "bandwidth"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.PER_d < 0.5:
            raise ConfigError("PER_d must lie in (0, 0.5)")
        if self.S_min < 0 or self.R_embb_min <= 0 or self.R_mmtc_min <= 0:
            raise ConfigError("rate/SINR floors must be positive (S_min >= 0)")
        if self.n_d < 1:
            raise ConfigError("blocklength n_d must be >= 1")

    @property
    def noise_power(self):
        """Receiver noise power per antenna over the full band, W."""
        return dbm_to_watt(self.noise_density) * self.bandwidth

    @property
    def psi(self):
        """Effective uplink symbol rate B * tau_u / tau_c, Hz."""
        return self.bandwidth * self.tau_u / self.tau_c

    @property
    def digest(self):
        """Short stable hash of the full parameter set."""
        items = [f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)]
        return hashlib.sha256(";".join(items).encode()).hexdigest()[:12]


# Config file schema: one `key = value` pair per line, '#' comments. Keys are
# the ScenarioConfig field names, except that power budgets/training powers may
# be given in dBm via *_dbm keys and the SINR floor in dB via s_min_db.
_DBM_KEYS = {
    "p_u_max_dbm": "P_u_max",
    "q_d_max_dbm": "Q_d_max",
    "eta_u_dbm": "eta_u",
    "zeta_d_dbm": "zeta_d",
}
_INT_FIELDS = {"M", "L", "K_u", "K_d", "M_s", "N", "tau_c", "tau_p", "tau_u",
               "n_d", "seed"}


def load_config(path):
    """Parse a key-value config file into a ScenarioConfig."""
    field_map = {f.name.lower(): f.name for f in fields(ScenarioConfig)}
    kwargs = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = (part.strip() for part in line.split("=", 1))
            key = key.lower()
            if key in _DBM_KEYS:
                kwargs[_DBM_KEYS[key]] = dbm_to_watt(float(val))
            elif key == "s_min_db":
                kwargs["S_min"] = 10.0 ** (float(val) / 10.0)
            elif key in field_map:
                name = field_map[key]
                kwargs[name] = int(val) if name in _INT_FIELDS else float(val)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
    return ScenarioConfig(**kwargs)


def save_config(config, path):
    """Write a config file that load_config round-trips exactly."""
    lines = ["# scenario configuration (powers in watts unless *_dbm)"]
    for f in fields(ScenarioConfig):
        lines.append(f"{f.name} = {getattr(config, f.name)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class Deployment:
    """One realized drop: geometry, large-scale fading, association, pilots."""

    ap_pos: np.ndarray           # (M, 3) AP coordinates, m
    user_pos: np.ndarray         # (K_u, 3)
    device_pos: np.ndarray       # (K_d, 3)
    alpha: np.ndarray            # (M, K_u) user large-scale fading, linear
    beta: np.ndarray             # (M, K_d) device large-scale fading, linear
    a_mask: np.ndarray           # (M, K_u) 0/1 serving-AP mask, columns sum M_s
    b_mask: np.ndarray           # (M, K_d)
    pilot_of_user: np.ndarray    # (K_u,) pilot index in [0, tau_p)
    pilot_of_device: np.ndarray  # (K_d,)


def associate(lsf_column, m_s):
    """Serving mask for one terminal: the m_s largest entries, ties to the
    lowest AP index."""
    lsf = np.asarray(lsf_column, dtype=float)
    if not 1 <= m_s <= lsf.shape[0]:
        raise ConfigError(f"M_s={m_s} out of range for M={lsf.shape[0]}")
    order = np.argsort(-lsf, kind="stable")  # stable => ties keep low index
    mask = np.zeros(lsf.shape[0], dtype=np.int64)
    mask[order[:m_s]] = 1
    return mask


def assign_pilots(config, rng):
    """Balanced random pilot reuse: every pilot is shared by floor or ceil of
    (K_u+K_d)/tau_p terminals; which terminal gets which is seed-random."""
    total = config.K_u + config.K_d
    base = np.arange(total, dtype=np.int64) % config.tau_p
    perm = rng.permutation(base)
    return perm[: config.K_u].copy(), perm[config.K_u:].copy()


def generate_deployment(config, index=0):
    """Draw one deployment under the configured seed and instance index."""
    rng = rng_for(config.seed, index)
    side = config.area_side

    ap_xy = rng.uniform(0.0, side, size=(config.M, 2))
    user_xy = rng.uniform(0.0, side, size=(config.K_u, 2))
    device_xy = rng.uniform(0.0, side, size=(config.K_d, 2))

    ap_pos = np.column_stack([ap_xy, np.full(config.M, config.h_ap)])
    user_pos = np.column_stack([user_xy, np.full(config.K_u, config.h_term)])
    device_pos = np.column_stack([device_xy, np.full(config.K_d, config.h_term)])

    dz = config.h_ap - config.h_term

    def lsf_matrix(term_xy, n_term):
        d2d = np.linalg.norm(ap_xy[:, None, :] - term_xy[None, :, :], axis=2)
        d3d = np.sqrt(d2d ** 2 + dz ** 2)
        pl_db = pathloss_db(d3d)
        if config.shadow_std_db > 0.0:
            pl_db = pl_db + config.shadow_std_db * rng.standard_normal(
                (config.M, n_term))
        return 10.0 ** (-pl_db / 10.0)

    alpha = lsf_matrix(user_xy, config.K_u)
    beta = lsf_matrix(device_xy, config.K_d)

    pilot_of_user, pilot_of_device = assign_pilots(config, rng)

    a_mask = np.stack([associate(alpha[:, u], config.M_s)
                       for u in range(config.K_u)], axis=1)
    b_mask = np.stack([associate(beta[:, d], config.M_s)
                       for d in range(config.K_d)], axis=1)

    return Deployment(ap_pos, user_pos, device_pos, alpha, beta,
                      a_mask, b_mask, pilot_of_user, pilot_of_device)


def dump_deployment_csv(dep, path):
    """Debug dump: positions, per-link fading, association, pilots."""
    with open(path, "w", newline="") as fh:
        fh.write("# record_type: ap_position | user_position | device_position"
                 " | user_link | device_link\n")
        fh.write("# positions carry x,y,z (m) and the terminal's pilot index;"
                 " links carry AP index m, terminal index k,\n")
        fh.write("# large-scale fading (linear) and the 0/1 serving flag\n")
        writer = csv.writer(fh)
        writer.writerow(["record_type", "m", "k", "x", "y", "z",
                         "lsf", "serving", "pilot"])
        for m, pos in enumerate(dep.ap_pos):
            writer.writerow(["ap_position", m, "", *pos, "", "", ""])
        for k, pos in enumerate(dep.user_pos):
            writer.writerow(["user_position", "", k, *pos, "", "",
                             dep.pilot_of_user[k]])
        for k, pos in enumerate(dep.device_pos):
            writer.writerow(["device_position", "", k, *pos, "", "",
                             dep.pilot_of_device[k]])
        for m in range(dep.alpha.shape[0]):
            for k in range(dep.alpha.shape[1]):
                writer.writerow(["user_link", m, k, "", "", "",
                                 repr(dep.alpha[m, k]), dep.a_mask[m, k], ""])
            for k in range(dep.beta.shape[1]):
                writer.writerow(["device_link", m, k, "", "", "",
                                 repr(dep.beta[m, k]), dep.b_mask[m, k], ""])
