"""Dataset loading and line-graph construction.

Each record exported by the batch harness describes one solved deployment:
the large-scale fading of every access-point/terminal link (users then
devices, access-point-major), the 0/1 serving masks, the solver's power
vector, per-terminal rates and energy efficiencies at that point, and the
ten deterministic SINR coefficient families ("moments") that allow rates
and efficiencies to be recomputed here without the analytical toolchain.

A record becomes a graph whose nodes are the individual access-point/user
and access-point/device links. Two nodes are adjacent exactly when they
share an access point, a user, or a device (never with themselves), which
yields six directed edge kinds — three feeding user-link nodes and three
feeding device-link nodes. Every directed edge carries a four-state
activity code combining the serving flags of the updated node and of the
peer whose feature it delivers; codes are one-hot encoded for the model.
"""

import gzip
import json
import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.special import erfcinv

DATASET_SCHEMA = "cfcoex-dataset-v1"

# Edge kinds, named <relation>_<updated class>_<peer class> for the
# shared-access-point relations. The first three update user-link nodes,
# the last three update device-link nodes.
USER_SIDE_KINDS = ("ap_user_user", "ap_user_device", "same_user")
DEVICE_SIDE_KINDS = ("ap_device_device", "ap_device_user", "same_device")
EDGE_KINDS = USER_SIDE_KINDS + DEVICE_SIDE_KINDS

# class of the peer (feature source) node for each kind
PEER_CLASS = {
    "ap_user_user": "user",
    "ap_user_device": "device",
    "same_user": "user",
    "ap_device_device": "device",
    "ap_device_user": "user",
    "same_device": "device",
}

MOMENT_FIELDS = ("delta", "upsilon", "kappa", "varkappa", "xi",
                 "lam", "nu", "eps_dd", "eps_du", "chi")

LOG2E = math.log2(math.e)


class DataError(ValueError):
    """Malformed dataset file or record."""


# ---------------------------------------------------------------------------
# problem constants shared by every record of a scenario
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemConstants:
    """Scenario-level quantities the loss and readout need.

    Rates are in bits/s, powers in watts, efficiencies in bits/J; the
    back-off factor is the short-packet dispersion multiplier applied to
    device spectral efficiencies under the finite-blocklength regime.
    """

    m: int
    k_u: int
    k_d: int
    user_budget: float
    device_budget: float
    symbol_rate: float
    spread: int
    back_off: float
    amp_inefficiency: float
    static_power: float
    user_rate_floor: float
    regime: str

    @classmethod
    def from_header(cls, header):
        cfg = header["config"]
        qinv = math.sqrt(2.0) * float(erfcinv(2.0 * cfg["PER_d"]))
        return cls(
            m=cfg["M"], k_u=cfg["K_u"], k_d=cfg["K_d"],
            user_budget=cfg["P_u_max"], device_budget=cfg["Q_d_max"],
            symbol_rate=cfg["bandwidth"] * cfg["tau_u"] / cfg["tau_c"],
            spread=cfg["N"],
            back_off=LOG2E / math.sqrt(cfg["n_d"]) * qinv,
            amp_inefficiency=cfg["mu_d"], static_power=cfg["Theta_d"],
            user_rate_floor=cfg["R_embb_min"], regime=header["regime"],
        )


# ---------------------------------------------------------------------------
# graph topology (fixed per scenario; activity codes vary per record)
# ---------------------------------------------------------------------------

def build_topology(m, k_u, k_d):
    """Directed edge lists per kind as (updated-node, peer-node) arrays.

    Link node (ap, terminal) of a class with K terminals has index
    ap * K + terminal, matching the access-point-major fading layout.
    """
    aps = range(m)
    uu = [(a * k_u + i, a * k_u + j)
          for a in aps for i in range(k_u) for j in range(k_u) if j != i]
    ud = [(a * k_u + i, a * k_d + j)
          for a in aps for i in range(k_u) for j in range(k_d)]
    su = [(a * k_u + i, a2 * k_u + i)
          for i in range(k_u) for a in aps for a2 in aps if a2 != a]
    dd = [(a * k_d + i, a * k_d + j)
          for a in aps for i in range(k_d) for j in range(k_d) if j != i]
    du = [(a * k_d + i, a * k_u + j)
          for a in aps for i in range(k_d) for j in range(k_u)]
    sd = [(a * k_d + i, a2 * k_d + i)
          for i in range(k_d) for a in aps for a2 in aps if a2 != a]
    out = {}
    for kind, pairs in zip(EDGE_KINDS, (uu, ud, su, dd, du, sd)):
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        out[kind] = (arr[:, 0].copy(), arr[:, 1].copy())
    return out


def activity_codes(topology, user_active, device_active):
    """Per-edge activity code 2*active(node) + active(peer) for one record.

    Code 3 = both links served, 2 = only the updated node's link served,
    1 = only the peer's link served, 0 = neither; one-hot position equals
    the code.
    """
    act = {"user": np.asarray(user_active, dtype=np.int64),
           "device": np.asarray(device_active, dtype=np.int64)}
    codes = {}
    for kind, (node, peer) in topology.items():
        node_class = "user" if kind in USER_SIDE_KINDS else "device"
        codes[kind] = 2 * act[node_class][node] + act[PEER_CLASS[kind]][peer]
    return codes


# ---------------------------------------------------------------------------
# feature standardization
# ---------------------------------------------------------------------------

@dataclass
class Standardizer:
    """Log-feature location/scale fitted on the training split only."""

    user_mean: float
    user_std: float
    device_mean: float
    device_std: float

    @classmethod
    def fit(cls, user_logs, device_logs):
        return cls(user_mean=float(np.mean(user_logs)),
                   user_std=max(float(np.std(user_logs)), 1e-12),
                   device_mean=float(np.mean(device_logs)),
                   device_std=max(float(np.std(device_logs)), 1e-12))

    def apply(self, user_logs, device_logs):
        return ((user_logs - self.user_mean) / self.user_std,
                (device_logs - self.device_mean) / self.device_std)


# ---------------------------------------------------------------------------
# scenario data
# ---------------------------------------------------------------------------

@dataclass
class SampleBatch:
    """Stacked tensors for a set of records of one scenario."""

    user_x: torch.Tensor          # (B, M*K_u, 1) standardized log fading
    device_x: torch.Tensor        # (B, M*K_d, 1)
    codes: dict                   # kind -> (B, E, 4) one-hot activity
    theta: torch.Tensor           # (B, K_u+K_d) solver powers, W
    objective: torch.Tensor       # (B,) min device EE at theta, bits/J
    moments: dict                 # field -> (B, ...) coefficient tensors
    indices: tuple                # record row numbers, for bookkeeping

    def __len__(self):
        return self.theta.shape[0]


def _open_text(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, encoding="utf-8")


def load_splits(path):
    """Read a split manifest: {"train": [...], "val": [...], "test": [...]}."""
    with _open_text(path) as fh:
        splits = json.load(fh)
    missing = {"train", "val", "test"} - set(splits)
    if missing:
        raise DataError(f"{path}: split manifest missing {sorted(missing)}")
    return {k: list(map(int, splits[k])) for k in ("train", "val", "test")}


class ScenarioData:
    """One scenario file held as stacked arrays, ready for batching."""

    def __init__(self, header, records):
        if header.get("schema") != DATASET_SCHEMA:
            raise DataError(f"unsupported dataset schema {header.get('schema')!r}")
        self.header = header
        self.constants = ProblemConstants.from_header(header)
        c = self.constants
        self.topology = build_topology(c.m, c.k_u, c.k_d)
        n_user, n_device = c.m * c.k_u, c.m * c.k_d

        phi = np.empty((len(records), n_user + n_device))
        theta = np.empty((len(records), c.k_u + c.k_d))
        objective = np.empty(len(records))
        codes = {kind: np.empty((len(records), len(node)), dtype=np.int64)
                 for kind, (node, _) in self.topology.items()}
        moments = {name: [] for name in MOMENT_FIELDS}
        for r, rec in enumerate(records):
            try:
                row = np.asarray(rec["phi"], dtype=float)
                if row.shape != (n_user + n_device,) or not np.all(row > 0):
                    raise DataError(f"fading vector must hold "
                                    f"{n_user + n_device} positive gains")
                phi[r] = row
                theta[r] = rec["theta"]
                objective[r] = rec["objective"]
                rec_codes = activity_codes(self.topology,
                                           rec["user_mask"],
                                           rec["device_mask"])
                for kind in codes:
                    codes[kind][r] = rec_codes[kind]
                for name in MOMENT_FIELDS:
                    moments[name].append(np.asarray(rec["moments"][name]))
            except (KeyError, ValueError, IndexError) as exc:
                raise DataError(f"record {r}: {exc}") from exc

        self.n_records = len(records)
        self.user_logs = np.log(phi[:, :n_user])
        self.device_logs = np.log(phi[:, n_user:])
        self.theta = theta
        self.objective = objective
        self.raw_codes = codes
        self.code_onehot = {kind: np.eye(4)[arr] for kind, arr in codes.items()}
        self.moments = {name: np.stack(arrs) for name, arrs in moments.items()}

    @classmethod
    def load(cls, path):
        """Read one scenario file (plain or gzipped JSON-lines)."""
        with _open_text(path) as fh:
            lines = [ln for ln in fh.read().split("\n") if ln]
        if not lines:
            raise DataError(f"{path}: empty dataset file")
        header = json.loads(lines[0])
        return cls(header, [json.loads(ln) for ln in lines[1:]])

    def fit_standardizer(self, indices):
        idx = np.asarray(indices, dtype=int)
        return Standardizer.fit(self.user_logs[idx], self.device_logs[idx])

    def batch(self, indices, standardizer):
        idx = np.asarray(indices, dtype=int)
        user_x, device_x = standardizer.apply(self.user_logs[idx],
                                              self.device_logs[idx])

        def as_t(arr):
            return torch.as_tensor(arr, dtype=torch.float64)

        return SampleBatch(
            user_x=as_t(user_x).unsqueeze(-1),
            device_x=as_t(device_x).unsqueeze(-1),
            codes={k: as_t(v[idx]) for k, v in self.code_onehot.items()},
            theta=as_t(self.theta[idx]),
            objective=as_t(self.objective[idx]),
            moments={k: as_t(v[idx]) for k, v in self.moments.items()},
            indices=tuple(int(i) for i in idx),
        )
