"""Batch engine and command-line front end.

Runs seeded Monte Carlo deployment batches for every power-control policy,
writes plot-ready CDF tables, compares the shared-spectrum design against an
orthogonal resource split, validates the closed-form SINR coefficients
against the simulation chain, exports solver-labelled training datasets, and
scores distribution similarity between two result tables.

Every batch is deterministic under (seed, config): instances draw from
per-index random streams and results are merged in instance order, so the
output files are byte-identical for any worker count.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import heuristics, rates
from .channel_stats import compute_stats
from .mc_oracle import (PRIMITIVE_TAPS, empirical_embb_moments,
                        empirical_mmtc_moments)
from .optimizer import SolverError, sequential_fp
from .rates import EEParams, MomentSet
from .scenario import (ConfigError, ScenarioConfig, generate_deployment,
                       load_config, rng_for)

log = logging.getLogger("cfcoex.harness")

POLICIES = ("opc", "upc", "fpc", "gfpc")
REGIMES = ("fbl", "shannon")

# lengths realizable by the shift-register generator, plus the degenerate
# no-spreading case
SPREAD_LENGTHS = tuple(sorted([1] + [2 ** m - 1 for m in PRIMITIVE_TAPS]))

# scenario tuples (K_u, K_d, M, M_s) exported by default
DEFAULT_DATASET_GRID = ((2, 10, 10, 5), (2, 10, 10, 1), (2, 10, 5, 5),
                        (1, 10, 10, 5), (1, 5, 10, 5))

_SPLIT_STREAM = 7_000_003   # RNG stream index reserved for dataset splits
_EXPORT_BATCH = 16          # instances solved per export round, worker-free

MOMENT_FIELDS = ("delta", "upsilon", "kappa", "varkappa", "xi",
                 "lam", "nu", "eps_dd", "eps_du", "chi")


# ---------------------------------------------------------------------------
# CDF series
# ---------------------------------------------------------------------------

@dataclass
class CdfSeries:
    """One empirical distribution: sorted values with per-sample verdicts.

    Samples from infeasible instances enter as 0.0 with a cleared flag so
    the lower tail of the curve shows the outage mass.
    """

    values: np.ndarray    # sorted ascending
    feasible: np.ndarray  # bool, aligned with values
    label: str

    @classmethod
    def from_samples(cls, values, feasible, label):
        values = np.asarray(values, float)
        feasible = np.asarray(feasible, bool)
        values = np.where(feasible, values, 0.0)
        order = np.lexsort((~feasible, values))  # value asc, feasible first
        return cls(values=values[order], feasible=feasible[order],
                   label=label)

    @property
    def feasible_fraction(self):
        return float(np.mean(self.feasible)) if len(self.feasible) else 0.0

    @property
    def cdf(self):
        n = len(self.values)
        return np.arange(1, n + 1) / n

    def quantile(self, pct):
        """Value at the given percentile (linear interpolation)."""
        return float(np.percentile(self.values, pct))

    def to_csv(self, path):
        lines = [f"# cfcoex-cdf label={self.label} "
                 f"feasible_fraction={self.feasible_fraction!r}",
                 "value,cdf,feasible_flag"]
        for v, c, f in zip(self.values, self.cdf, self.feasible):
            lines.append(f"{float(v)!r},{float(c)!r},{int(f)}")
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh]
        if not lines or not lines[0].startswith("# cfcoex-cdf"):
            raise ConfigError(f"{path}: not a cfcoex CDF table")
        label = lines[0].split("label=", 1)[1].split(" feasible_fraction")[0]
        values, flags = [], []
        for ln in lines[2:]:
            if not ln:
                continue
            v, _, f = ln.split(",")
            values.append(float(v))
            flags.append(bool(int(f)))
        return cls(values=np.asarray(values), feasible=np.asarray(flags),
                   label=label)


# ---------------------------------------------------------------------------
# per-instance evaluation (worker side)
# ---------------------------------------------------------------------------

def _policy_point(config, dep, moments, params, regime, policy):
    """Power vector chosen by the named policy; None when the optimizer
    certifies the instance infeasible."""
    if policy == "opc":
        result = sequential_fp(config, dep, moments=moments, regime=regime,
                               params=params)
        return result.theta_star if result.feasible else None
    if policy == "upc":
        return heuristics.upc(config)
    if policy == "fpc":
        return heuristics.fpc(config, dep)
    if policy == "gfpc":
        return heuristics.gfpc(config, dep)
    raise ConfigError(f"unknown policy '{policy}'")


def _evaluate_instance(task):
    """Full pipeline for one deployment: stats, moments, policy, verdict."""
    config, index, policy, regime, split = task
    dep = generate_deployment(config, index)
    stats = compute_stats(dep, config)
    moments = MomentSet.compute(stats, dep, config)
    params = EEParams.from_config(config)
    if split is not None:
        moments, params, _ = _orthogonal_view(config, dep, stats, moments,
                                              *split)
    try:
        theta = _policy_point(config, dep, moments, params, regime, policy)
    except SolverError as exc:
        log.warning("instance %d: solver failed (%s); marked infeasible",
                    index, exc)
        theta = None
    if theta is None:
        zeros_u = np.zeros(config.K_u)
        zeros_d = np.zeros(config.K_d)
        return {"index": index, "feasible": False, "user_rate": zeros_u,
                "device_rate": zeros_d, "device_ee": zeros_d, "theta": None}
    verdict = heuristics.mark_feasible(theta, moments, config, regime,
                                       params=params)
    perf = rates.terminal_performance(theta, moments, config, regime, params)
    return {"index": index, "feasible": verdict.feasible,
            "user_rate": perf["user_rate"],
            "device_rate": perf["device_rate"],
            "device_ee": perf["device_ee"],
            "theta": theta.as_array()}


def _map_instances(tasks, workers):
    """Run the per-instance pipeline, preserving task order exactly."""
    if workers <= 1:
        rows = [_evaluate_instance(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_evaluate_instance, tasks, chunksize=4))
    rows.sort(key=lambda r: r["index"])
    return rows


def _series_from_rows(rows, prefix):
    """Assemble the labelled CDF set: per-instance minima and pooled
    per-terminal values, infeasible instances zeroed with cleared flags."""
    flags = np.array([r["feasible"] for r in rows], bool)
    min_ee = np.array([r["device_ee"].min() for r in rows])
    min_rate = np.array([r["user_rate"].min() for r in rows])
    ee_all = np.concatenate([r["device_ee"] for r in rows])
    rate_all = np.concatenate([r["user_rate"] for r in rows])
    flags_dev = np.concatenate(
        [np.full(len(r["device_ee"]), r["feasible"], bool) for r in rows])
    flags_usr = np.concatenate(
        [np.full(len(r["user_rate"]), r["feasible"], bool) for r in rows])
    return {
        "min_device_ee": CdfSeries.from_samples(
            min_ee, flags, f"{prefix}:min_device_ee"),
        "min_user_rate": CdfSeries.from_samples(
            min_rate, flags, f"{prefix}:min_user_rate"),
        "device_ee": CdfSeries.from_samples(
            ee_all, flags_dev, f"{prefix}:device_ee"),
        "user_rate": CdfSeries.from_samples(
            rate_all, flags_usr, f"{prefix}:user_rate"),
    }


# ---------------------------------------------------------------------------
# batch drivers
# ---------------------------------------------------------------------------

def run_batch(config, policy="opc", n_instances=100, regime="fbl",
              workers=1, split=None):
    """Evaluate a policy over independent deployments.

    Returns a dict of CdfSeries: per-instance minima ("min_device_ee",
    "min_user_rate") and pooled per-terminal values ("device_ee",
    "user_rate"). Deterministic in (config, n_instances) for any workers.
    """
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy '{policy}'")
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime '{regime}'")
    tasks = [(config, i, policy, regime, split) for i in range(n_instances)]
    rows = _map_instances(tasks, workers)
    prefix = f"{policy}:{regime}" if split is None else \
        f"{policy}:{regime}:oma({split[0]:g},{split[1]:g})"
    return _series_from_rows(rows, prefix)


def sweep(config, param, values, policy="upc", n_instances=100,
          regime="fbl", workers=1):
    """Re-run a batch for each value of one scenario field.

    Returns a list of {param, value, series} dicts in the given order.
    Fields derived from the swept one (pilot/data symbol counts) are
    recomputed per point.
    """
    valid = {f.name for f in ScenarioConfig.__dataclass_fields__.values()}
    if param not in valid:
        raise ConfigError(f"'{param}' is not a scenario field")
    points = []
    for value in values:
        changes = {"tau_p": None, "tau_u": None}  # re-derive symbol counts
        changes[param] = value
        cfg = replace(config, **changes)
        series = run_batch(cfg, policy=policy, n_instances=n_instances,
                           regime=regime, workers=workers)
        for s in series.values():
            s.label = f"{param}={value}:{s.label}"
        points.append({"param": param, "value": value, "series": series})
    return points


# ---------------------------------------------------------------------------
# orthogonal-split comparison
# ---------------------------------------------------------------------------

def nearest_spread_length(target):
    """Closest realizable signature length; ties resolve to the shorter."""
    return min(SPREAD_LENGTHS, key=lambda n: (abs(n - target), n))


def _orthogonal_view(config, dep, stats, moments, r_u, r_d):
    """Moments and rate prelogs when users and devices get disjoint r_u% and
    r_d% shares of the resources instead of sharing all of them.

    Users lose the device coupling and keep r_u% of the symbol rate; devices
    lose the user coupling and respread over the closest realizable length
    to r_d% of the original chips, which rescales their moment prefactors.
    """
    if r_u < 0 or r_d < 0 or r_u + r_d > 100:
        raise ConfigError("resource shares must be nonnegative with "
                          "r_u + r_d <= 100")
    chips = r_d * config.N / 100.0
    if chips < 1.0:
        raise ConfigError(f"device share r_d={r_d:g}% of N={config.N} "
                          "rounds below one chip")
    n_split = nearest_spread_length(chips)
    cfg_split = replace(config, N=n_split)
    dev = MomentSet.compute(stats, dep, cfg_split)
    mom = MomentSet(delta=moments.delta, upsilon=moments.upsilon,
                    kappa=moments.kappa,
                    varkappa=np.zeros_like(moments.varkappa),
                    xi=moments.xi,
                    lam=dev.lam, nu=dev.nu, eps_dd=dev.eps_dd,
                    eps_du=np.zeros_like(dev.eps_du), chi=dev.chi)
    base = EEParams.from_config(config)
    params = EEParams(psi=base.psi, N=n_split, v_d=base.v_d,
                      mu_d=base.mu_d, Theta_d=base.Theta_d,
                      user_prelog=base.psi * r_u / 100.0,
                      device_prelog=(base.psi * r_d / 100.0) / n_split)
    return mom, params, n_split


def compare_oma(config, r_u, r_d, policy="opc", n_instances=100,
                regime="fbl", workers=1):
    """Paired batches: shared spectrum versus an orthogonal (r_u%, r_d%)
    split, same deployments and policy. Returns {"noma": ..., "oma": ...}."""
    # fail fast on an impossible split before paying for the full batch
    if r_u < 0 or r_d < 0 or r_u + r_d > 100:
        raise ConfigError("resource shares must be nonnegative with "
                          "r_u + r_d <= 100")
    if r_d * config.N / 100.0 < 1.0:
        raise ConfigError(f"device share r_d={r_d:g}% of N={config.N} "
                          "rounds below one chip")
    noma = run_batch(config, policy=policy, n_instances=n_instances,
                     regime=regime, workers=workers)
    oma = run_batch(config, policy=policy, n_instances=n_instances,
                    regime=regime, workers=workers, split=(r_u, r_d))
    return {"noma": noma, "oma": oma}


# ---------------------------------------------------------------------------
# closed-form validation
# ---------------------------------------------------------------------------

def _family_error(closed, empirical):
    """Relative error at family scale: max |closed-empirical| / max |closed|."""
    closed = np.asarray(closed, float)
    empirical = np.asarray(empirical, float)
    scale = np.max(np.abs(closed))
    if scale == 0.0:
        return float(np.max(np.abs(empirical)))
    return float(np.max(np.abs(closed - empirical)) / scale)


def validate(config, n_draws, device_draws=None, instance=0,
             tol_user=0.03, tol_device=0.05):
    """Compare every closed-form moment against the simulation chain.

    Returns {"rows": [...], "passed": bool, ...}; each row carries the
    family name, its relative error at family scale, and the verdict.
    """
    if device_draws is None:
        device_draws = n_draws
    dep = generate_deployment(config, instance)
    stats = compute_stats(dep, config)
    closed = MomentSet.compute(stats, dep, config)
    emp_user = empirical_embb_moments(dep, config, n_draws)
    emp_dev = empirical_mmtc_moments(dep, config, device_draws)
    empirical = dict(zip(MOMENT_FIELDS, list(emp_user) + list(emp_dev)))

    rows = []
    for name in MOMENT_FIELDS:
        side = "user" if name in MOMENT_FIELDS[:5] else "device"
        tol = tol_user if side == "user" else tol_device
        err = _family_error(getattr(closed, name), empirical[name])
        rows.append({"family": name, "side": side, "rel_err": err,
                     "tol": tol, "pass": err <= tol})
    return {"rows": rows, "passed": all(r["pass"] for r in rows),
            "n_draws": n_draws, "device_draws": device_draws,
            "instance": instance, "config_digest": config.digest}


# ---------------------------------------------------------------------------
# dataset export
# ---------------------------------------------------------------------------

def _dataset_record(config, row):
    """One training example: large-scale fading in, solver powers out."""
    dep = generate_deployment(config, row["index"])
    moments = MomentSet.compute(compute_stats(dep, config), dep, config)
    return {
        "instance": row["index"],
        "phi": np.concatenate([dep.alpha.ravel(),
                               dep.beta.ravel()]).tolist(),
        "user_mask": dep.a_mask.astype(int).ravel().tolist(),
        "device_mask": dep.b_mask.astype(int).ravel().tolist(),
        "config_digest": config.digest,
        "theta": row["theta"].tolist(),
        "user_rate": row["user_rate"].tolist(),
        "device_rate": row["device_rate"].tolist(),
        "device_ee": row["device_ee"].tolist(),
        "objective": float(row["device_ee"].min()),
        "moments": {name: getattr(moments, name).tolist()
                    for name in MOMENT_FIELDS},
    }


def _scenario_tag(cfg):
    return f"ku{cfg.K_u}_kd{cfg.K_d}_m{cfg.M}_ms{cfg.M_s}"


def _dataset_header(cfg, regime, n_records):
    return {
        "schema": "cfcoex-dataset-v1",
        "config": asdict(cfg),
        "config_digest": cfg.digest,
        "regime": regime,
        "n_records": n_records,
        "phi_order": "users then devices, access-point-major "
                     "(phi[m*K+k] = gain of terminal k at AP m)",
        "fields": ["instance", "phi", "user_mask", "device_mask",
                   "config_digest", "theta", "user_rate", "device_rate",
                   "device_ee", "objective", "moments"],
    }


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _export_scenario(cfg, n_records, regime, workers, out_dir, ordinal):
    """Solve instances in index order until n_records feasible ones are
    collected; abort once infeasibility clearly dominates."""
    records = []
    attempts = 0
    next_index = 0
    while len(records) < n_records:
        batch = list(range(next_index, next_index + _EXPORT_BATCH))
        next_index += _EXPORT_BATCH
        tasks = [(cfg, i, "opc", regime, None) for i in batch]
        rows = _map_instances(tasks, workers)
        for row in rows:
            if len(records) == n_records:
                break
            attempts += 1
            if row["feasible"]:
                records.append(_dataset_record(cfg, row))
            if (len(records) < n_records and attempts >= 20
                    and (attempts - len(records)) > 0.5 * attempts):
                raise SolverError(
                    f"scenario {_scenario_tag(cfg)}: infeasibility rate "
                    f"{1 - len(records) / attempts:.0%} after {attempts} "
                    "instances exceeds 50%; aborting export")

    tag = _scenario_tag(cfg)
    data_path = os.path.join(out_dir, f"{tag}.jsonl")
    lines = [_dumps(_dataset_header(cfg, regime, n_records))]
    lines += [_dumps(rec) for rec in records]
    with open(data_path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")

    order = np.arange(n_records)
    rng_for(cfg.seed, _SPLIT_STREAM + ordinal).shuffle(order)
    n_train = int(0.8 * n_records)
    n_val = int(0.1 * n_records)
    splits = {"train": sorted(order[:n_train].tolist()),
              "val": sorted(order[n_train:n_train + n_val].tolist()),
              "test": sorted(order[n_train + n_val:].tolist())}
    splits_path = os.path.join(out_dir, f"{tag}.splits.json")
    with open(splits_path, "w", newline="\n") as fh:
        fh.write(_dumps(splits) + "\n")
    return {"tag": tag, "records": n_records, "file": f"{tag}.jsonl",
            "splits": f"{tag}.splits.json", "config_digest": cfg.digest}


def export_dataset(config, path, n_per_scenario=100, grid=None,
                   regime="fbl", workers=1):
    """Write one labelled dataset per scenario tuple plus a manifest.

    Each scenario file is JSON-lines with a self-describing header line;
    splits go to a sibling manifest with 80/10/10 train/val/test row
    indices. Only feasible solves are exported.
    """
    if grid is None:
        grid = DEFAULT_DATASET_GRID
    os.makedirs(path, exist_ok=True)
    entries = []
    for ordinal, (k_u, k_d, m, m_s) in enumerate(grid):
        cfg = replace(config, K_u=k_u, K_d=k_d, M=m, M_s=m_s,
                      tau_p=None, tau_u=None)
        log.info("exporting scenario %s", _scenario_tag(cfg))
        entries.append(_export_scenario(cfg, n_per_scenario, regime,
                                        workers, path, ordinal))
    manifest = {"schema": "cfcoex-dataset-manifest-v1",
                "base_seed": config.seed, "regime": regime,
                "n_per_scenario": n_per_scenario, "scenarios": entries}
    with open(os.path.join(path, "manifest.json"), "w", newline="\n") as fh:
        fh.write(_dumps(manifest) + "\n")
    return manifest


def load_dataset(path):
    """Read one scenario file back: (header dict, list of records)."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    header = json.loads(lines[0])
    if header.get("schema") != "cfcoex-dataset-v1":
        raise ConfigError(f"{path}: not a cfcoex dataset file")
    return header, [json.loads(ln) for ln in lines[1:]]


# ---------------------------------------------------------------------------
# distribution metrics
# ---------------------------------------------------------------------------

def metrics(series_a, series_b, bins=64):
    """Distribution distance between two series: (KL divergence, relative
    error of the 5th-percentile value).

    KL uses equal-width histograms over the union support with add-one
    smoothing, natural log, series_a as the reference.
    """
    a, b = series_a.values, series_b.values
    if len(a) == 0 or len(b) == 0:
        raise ValueError("cannot score an empty series")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi <= lo:
        hi = lo + 1.0  # all mass in one bin for both; divergence is zero
    edges = np.linspace(lo, hi, bins + 1)
    pa = np.histogram(a, edges)[0] + 1.0
    pb = np.histogram(b, edges)[0] + 1.0
    pa /= pa.sum()
    pb /= pb.sum()
    kl = float(np.sum(pa * np.log(pa / pb)))

    a5 = np.percentile(a, 5.0)
    b5 = np.percentile(b, 5.0)
    if a5 == 0.0:
        loss = 0.0 if b5 == 0.0 else float("inf")
    else:
        loss = abs(a5 - b5) / abs(a5)
    return kl, float(loss)


# ---------------------------------------------------------------------------
# command-line interface
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are plain errors (exit 1)
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sub):
    sub.add_argument("--config", metavar="FILE",
                     help="scenario file (key = value; powers in dBm via "
                          "*_dbm keys); defaults used when omitted")
    sub.add_argument("--seed", type=int, metavar="S",
                     help="override the scenario seed")
    sub.add_argument("--workers", type=int, default=1, metavar="W",
                     help="parallel instance workers (default 1)")


def _add_batch(sub):
    _add_common(sub)
    sub.add_argument("--policy", choices=POLICIES, default="opc",
                     help="power-control policy (default opc)")
    sub.add_argument("--regime", choices=REGIMES, default="fbl",
                     help="device rate model: finite-blocklength or "
                          "Shannon (default fbl)")
    sub.add_argument("-n", "--instances", type=int, default=100, metavar="N",
                     help="number of deployments (default 100)")
    sub.add_argument("--out", required=True, metavar="PREFIX",
                     help="output path prefix for the CDF tables")


def build_parser():
    parser = _Parser(prog="cfcoex",
                     description="cell-free coexistence batch harness")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("run", help="policy batch, CDF tables out")
    _add_batch(p)

    p = subs.add_parser("sweep", help="re-run a batch over one field")
    _add_batch(p)
    p.add_argument("--param", required=True, metavar="FIELD",
                   help="scenario field to vary (e.g. N)")
    p.add_argument("--values", required=True, metavar="V1,V2,...",
                   help="comma-separated values for the field")

    p = subs.add_parser("oma", help="shared spectrum vs orthogonal split")
    _add_batch(p)
    p.add_argument("--r-u", type=float, required=True, metavar="PCT",
                   help="user share of the resources, percent")
    p.add_argument("--r-d", type=float, required=True, metavar="PCT",
                   help="device share of the resources, percent")

    p = subs.add_parser("validate",
                        help="closed-form moments vs simulation chain")
    _add_common(p)
    p.add_argument("--draws", type=int, default=20000, metavar="D",
                   help="user-side channel draws (default 20000)")
    p.add_argument("--device-draws", type=int, metavar="D",
                   help="device-side draws (default: same as --draws)")
    p.add_argument("--instance", type=int, default=0, metavar="I",
                   help="deployment index to validate (default 0)")
    p.add_argument("--out", metavar="FILE", help="write the report as JSON")

    p = subs.add_parser("export-dataset",
                        help="solver-labelled training data")
    _add_common(p)
    p.add_argument("--path", required=True, metavar="DIR",
                   help="output directory")
    p.add_argument("-n", "--per-scenario", type=int, default=100,
                   metavar="N", help="feasible records per scenario "
                   "(default 100)")
    p.add_argument("--grid", metavar="KU,KD,M,MS;...",
                   help="scenario tuples; default is the built-in grid")
    p.add_argument("--regime", choices=REGIMES, default="fbl")

    p = subs.add_parser("metrics", help="compare two CDF tables")
    p.add_argument("reference", help="reference CDF table (CSV)")
    p.add_argument("candidate", help="candidate CDF table (CSV)")
    p.add_argument("--out", metavar="FILE", help="write scores as JSON")
    return parser


def _load_scenario(args):
    config = load_config(args.config) if args.config else ScenarioConfig()
    if getattr(args, "seed", None) is not None:
        config = replace(config, seed=args.seed)
    return config


def _write_series(series, prefix):
    for name in sorted(series):
        path = f"{prefix}_{name}.csv"
        series[name].to_csv(path)
        log.info("wrote %s (feasible %.1f%%)", path,
                 100 * series[name].feasible_fraction)


def _cmd_run(args):
    config = _load_scenario(args)
    series = run_batch(config, policy=args.policy,
                       n_instances=args.instances, regime=args.regime,
                       workers=args.workers)
    _write_series(series, args.out)
    frac = series["min_device_ee"].feasible_fraction
    print(f"feasible {frac:.1%} | min-EE median "
          f"{series['min_device_ee'].quantile(50):.4g} bits/J")
    return 0 if frac >= 0.5 else 2


def _cmd_sweep(args):
    config = _load_scenario(args)
    if args.param not in ScenarioConfig.__dataclass_fields__:
        raise ConfigError(f"'{args.param}' is not a scenario field")
    current = getattr(config, args.param)
    cast = type(current) if isinstance(current, (int, float)) else int
    values = [cast(v) for v in args.values.split(",")]
    points = sweep(config, args.param, values, policy=args.policy,
                   n_instances=args.instances, regime=args.regime,
                   workers=args.workers)
    lines = ["param,value,feasible_fraction,min_ee_p50,min_ee_p05"]
    best = 0.0
    for pt in points:
        _write_series(pt["series"], f"{args.out}_{args.param}{pt['value']}")
        s = pt["series"]["min_device_ee"]
        best = max(best, s.feasible_fraction)
        lines.append(f"{pt['param']},{pt['value']},"
                     f"{float(s.feasible_fraction)!r},"
                     f"{float(s.quantile(50))!r},{float(s.quantile(5))!r}")
        print(f"{args.param}={pt['value']}: feasible "
              f"{s.feasible_fraction:.1%}")
    with open(f"{args.out}_summary.csv", "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0 if best >= 0.5 else 2


def _cmd_oma(args):
    config = _load_scenario(args)
    pair = compare_oma(config, args.r_u, args.r_d, policy=args.policy,
                       n_instances=args.instances, regime=args.regime,
                       workers=args.workers)
    _write_series(pair["noma"], f"{args.out}_noma")
    _write_series(pair["oma"], f"{args.out}_oma")
    for mode in ("noma", "oma"):
        s = pair[mode]["min_device_ee"]
        print(f"{mode}: feasible {s.feasible_fraction:.1%} | min-EE median "
              f"{s.quantile(50):.4g} bits/J")
    frac = pair["noma"]["min_device_ee"].feasible_fraction
    return 0 if frac >= 0.5 else 2


def _cmd_validate(args):
    config = _load_scenario(args)
    report = validate(config, args.draws, device_draws=args.device_draws,
                      instance=args.instance)
    print(f"{'family':<10} {'side':<7} {'rel err':>10} {'tol':>6} verdict")
    for row in report["rows"]:
        print(f"{row['family']:<10} {row['side']:<7} "
              f"{row['rel_err']:>10.4f} {row['tol']:>6.2f} "
              f"{'pass' if row['pass'] else 'FAIL'}")
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0 if report["passed"] else 1


def _cmd_export(args):
    config = _load_scenario(args)
    grid = None
    if args.grid:
        grid = [tuple(int(x) for x in part.split(","))
                for part in args.grid.split(";") if part]
        if any(len(t) != 4 for t in grid):
            raise ConfigError("--grid entries must be K_u,K_d,M,M_s")
    manifest = export_dataset(config, args.path,
                              n_per_scenario=args.per_scenario, grid=grid,
                              regime=args.regime, workers=args.workers)
    for entry in manifest["scenarios"]:
        print(f"{entry['tag']}: {entry['records']} records")
    return 0


def _cmd_metrics(args):
    ref = CdfSeries.from_csv(args.reference)
    cand = CdfSeries.from_csv(args.candidate)
    kl, loss = metrics(ref, cand)
    result = {"kl_divergence": kl, "p95_loss": loss,
              "reference": ref.label, "candidate": cand.label}
    print(f"kl_divergence={kl!r} p95_loss={loss!r}")
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write(json.dumps(result, indent=2, sort_keys=True) + "\n")
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "sweep": _cmd_sweep, "oma": _cmd_oma,
                "validate": _cmd_validate, "export-dataset": _cmd_export,
                "metrics": _cmd_metrics}
    try:
        return handlers[args.command](args)
    except (ConfigError, SolverError, OSError, ValueError) as exc:
        print(f"cfcoex: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
