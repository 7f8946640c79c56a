"""Shared fixtures: a small self-consistent synthetic scenario.

The generator fabricates records with the exact schema the batch harness
exports — positive fading gains, serving masks, coefficient families with
zeroed self-coupling diagonals, powers inside the budget boxes — and then
computes the per-record rates, efficiencies, and objective with this
package's own loss functions so that labels and coefficients agree to the
last bit. The user rate floor is set below every record's worst user rate,
mirroring the fact that only feasible solves are ever exported.
"""

import gzip
import json

import numpy as np
import pytest
import torch

from gnnpc.data import ProblemConstants, ScenarioData
from gnnpc.loss import device_efficiencies, user_rates

BASE_CONFIG = {
    "M": 2, "K_u": 2, "K_d": 2,
    "P_u_max": 0.1, "Q_d_max": 0.01,
    "bandwidth": 20e6, "tau_c": 200, "tau_u": 97,
    "N": 7, "n_d": 100, "PER_d": 1e-3,
    "mu_d": 2.5, "Theta_d": 0.1,
    "R_embb_min": 1.0,          # placeholder, tightened after labelling
}


def _random_moments(rng, k_u, k_d):
    off_u = 1.0 - np.eye(k_u)
    off_d = 1.0 - np.eye(k_d)
    return {
        "delta": (rng.uniform(1, 10, k_u) * 1e-10).tolist(),
        "upsilon": (rng.uniform(0.1, 1, k_u) * 1e-10).tolist(),
        "kappa": (rng.uniform(0.01, 0.1, (k_u, k_u)) * 1e-10 * off_u).tolist(),
        "varkappa": (rng.uniform(0.01, 0.1, (k_u, k_d)) * 1e-10).tolist(),
        "xi": (rng.uniform(0.1, 1, k_u) * 1e-11).tolist(),
        "lam": (rng.uniform(1, 10, k_d) * 1e-8).tolist(),
        "nu": (rng.uniform(0.1, 1, k_d) * 1e-9).tolist(),
        "eps_dd": (rng.uniform(0.1, 1, (k_d, k_d)) * 1e-9 * off_d).tolist(),
        "eps_du": (rng.uniform(0.1, 1, (k_d, k_u)) * 1e-9).tolist(),
        "chi": (rng.uniform(0.1, 1, k_d) * 1e-10).tolist(),
    }


def _serving_mask(rng, m, k, served):
    mask = np.zeros((m, k), dtype=int)
    for col in range(k):
        mask[rng.choice(m, size=served, replace=False), col] = 1
    return mask.ravel().tolist()


def make_synthetic(m=2, k_u=2, k_d=2, n_records=24, seed=0, floor_scale=0.8):
    """Build (header, records) with labels consistent with the loss module."""
    rng = np.random.default_rng(seed)
    config = dict(BASE_CONFIG, M=m, K_u=k_u, K_d=k_d)
    header = {"schema": "cfcoex-dataset-v1", "config": config,
              "config_digest": f"synthetic{seed:04d}", "regime": "fbl",
              "n_records": n_records,
              "phi_order": "users then devices, access-point-major "
                           "(phi[m*K+k] = gain of terminal k at AP m)"}
    records = []
    for i in range(n_records):
        theta = np.concatenate([
            config["P_u_max"] * rng.uniform(0.1, 0.9, k_u),
            config["Q_d_max"] * rng.uniform(0.1, 0.9, k_d)])
        records.append({
            "instance": i,
            "phi": rng.lognormal(-20.0, 1.0, m * (k_u + k_d)).tolist(),
            "user_mask": _serving_mask(rng, m, k_u, served=max(1, m - 1)),
            "device_mask": _serving_mask(rng, m, k_d, served=max(1, m - 1)),
            "config_digest": header["config_digest"],
            "theta": theta.tolist(),
            "moments": _random_moments(rng, k_u, k_d),
        })

    constants = ProblemConstants.from_header(header)
    worst_rate = np.inf
    for rec in records:
        moments = {k: torch.as_tensor(np.asarray(v)[None],
                                      dtype=torch.float64)
                   for k, v in rec["moments"].items()}
        theta = torch.as_tensor(rec["theta"], dtype=torch.float64)[None]
        p, q = theta[:, :k_u], theta[:, k_u:]
        rates = user_rates(p, q, moments, constants)
        ee = device_efficiencies(p, q, moments, constants)
        rec["user_rate"] = rates[0].tolist()
        rec["device_ee"] = ee[0].tolist()
        rec["objective"] = float(ee.min())
        worst_rate = min(worst_rate, float(rates.min()))
    config["R_embb_min"] = floor_scale * worst_rate
    return header, records


def write_jsonl(path, header, records):
    text = "\n".join(json.dumps(obj, sort_keys=True, separators=(",", ":"))
                     for obj in [header] + list(records)) + "\n"
    if str(path).endswith(".gz"):
        with gzip.open(path, "wt", encoding="utf-8") as fh:
            fh.write(text)
    else:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    return path


def make_splits(n_records, seed=11):
    order = np.random.default_rng(seed).permutation(n_records)
    n_train, n_val = int(0.8 * n_records), int(0.1 * n_records)
    return {"train": sorted(order[:n_train].tolist()),
            "val": sorted(order[n_train:n_train + n_val].tolist()),
            "test": sorted(order[n_train + n_val:].tolist())}


@pytest.fixture(scope="session")
def synthetic(tmp_path_factory):
    header, records = make_synthetic()
    root = tmp_path_factory.mktemp("synthetic")
    data_path = write_jsonl(root / "scenario.jsonl", header, records)
    gz_path = write_jsonl(root / "scenario.jsonl.gz", header, records)
    splits = make_splits(len(records))
    splits_path = root / "scenario.splits.json"
    splits_path.write_text(json.dumps(splits) + "\n")
    return {"header": header, "records": records, "splits": splits,
            "data_path": str(data_path), "gz_path": str(gz_path),
            "splits_path": str(splits_path)}


@pytest.fixture(scope="session")
def scenario_data(synthetic):
    return ScenarioData.load(synthetic["data_path"])


@pytest.fixture(scope="session")
def full_batch(scenario_data):
    standardizer = scenario_data.fit_standardizer(
        range(scenario_data.n_records))
    return scenario_data.batch(range(scenario_data.n_records), standardizer)
