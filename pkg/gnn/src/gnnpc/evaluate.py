"""Scoring a trained model against the analytical solution.

The per-device energy efficiencies over a split — pooled across records
and devices, for the predicted powers and for the stored solver powers —
are compared with the same two scores the batch harness's `metrics`
command computes: KL divergence between 64-bin equal-width histogram
estimates with add-one smoothing (analytical side as the reference), and
the relative error of the 5th-percentile value. The report also carries
the rate-floor violation rate of the predictions and, as secondary
diagnostics, the same two scores on the per-record minimum-efficiency
distributions (at the solver optimum the devices are equalised, so the
analytical side of both comparisons is the same curve). Distributions can
be written as harness-compatible CDF tables so `cfcoex metrics` reproduces
the scores from the files alone.
"""

import json

import numpy as np
import torch

from .loss import device_efficiencies, rate_shortfall

METRICS_SCHEMA = "gnnpc-metrics-v2"


def predict_powers(model, standardizer, data, indices, chunk=512):
    """Model powers over records `indices`: arrays (n, K_u) and (n, K_d)."""
    ps, qs = [], []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(indices), chunk):
            batch = data.batch(indices[start:start + chunk], standardizer)
            p, q = model(batch)
            ps.append(p.numpy())
            qs.append(q.numpy())
    return np.concatenate(ps), np.concatenate(qs)


def histogram_divergence(reference, candidate, bins=64):
    """KL divergence between histogram estimates of two samples.

    Equal-width bins over the union support, add-one smoothing, natural
    log — the same estimator the harness uses, so the two reports agree.
    """
    a = np.asarray(reference, float)
    b = np.asarray(candidate, float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("cannot score an empty sample set")
    lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    pa = np.histogram(a, edges)[0] + 1.0
    pb = np.histogram(b, edges)[0] + 1.0
    pa /= pa.sum()
    pb /= pb.sum()
    return float(np.sum(pa * np.log(pa / pb)))


def fifth_percentile_loss(reference, candidate):
    """Relative error of the 5th-percentile value, reference as the base."""
    a5 = np.percentile(np.asarray(reference, float), 5.0)
    b5 = np.percentile(np.asarray(candidate, float), 5.0)
    if a5 == 0.0:
        return 0.0 if b5 == 0.0 else float("inf")
    return float(abs(a5 - b5) / abs(a5))


def evaluate_split(model, standardizer, data, indices, split_name="test"):
    """Score the model on one split of a scenario; returns the report dict."""
    if not indices:
        raise ValueError(f"split '{split_name}' is empty")
    batch = data.batch(indices, standardizer)
    model.eval()
    with torch.no_grad():
        p, q = model(batch)
        predicted = device_efficiencies(p, q, batch.moments,
                                        data.constants)
        k_u = p.shape[1]
        analytical = device_efficiencies(batch.theta[:, :k_u],
                                         batch.theta[:, k_u:],
                                         batch.moments, data.constants)
        short = rate_shortfall(p, q, batch.moments, data.constants)
    predicted_all = predicted.numpy().ravel()
    analytical_all = analytical.numpy().ravel()
    predicted_min = predicted.min(dim=1).values.numpy()
    analytical_min = batch.objective.numpy()
    return {
        "schema": METRICS_SCHEMA,
        "split": split_name,
        "n_samples": len(indices),
        "config_digest": data.header.get("config_digest"),
        "kl_divergence": histogram_divergence(analytical_all, predicted_all),
        "p95_loss": fifth_percentile_loss(analytical_all, predicted_all),
        "kl_divergence_min": histogram_divergence(analytical_min,
                                                  predicted_min),
        "p95_loss_min": fifth_percentile_loss(analytical_min, predicted_min),
        "violation_rate": float((short > 0).double().mean()),
        "analytical_ee": [float(v) for v in analytical_all],
        "predicted_ee": [float(v) for v in predicted_all],
        "analytical_min_ee": [float(v) for v in analytical_min],
        "predicted_min_ee": [float(v) for v in predicted_min],
    }


def write_cdf_csv(values, label, path):
    """Write one sample set as a harness-compatible CDF table.

    Every row is flagged feasible: only feasible records are exported into
    datasets, and predictions are scored as-is.
    """
    ordered = np.sort(np.asarray(values, float))
    n = len(ordered)
    lines = [f"# cfcoex-cdf label={label} feasible_fraction={1.0!r}",
             "value,cdf,feasible_flag"]
    lines += [f"{float(v)!r},{float((i + 1) / n)!r},1"
              for i, v in enumerate(ordered)]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_report(report, path):
    with open(path, "w", newline="\n") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
