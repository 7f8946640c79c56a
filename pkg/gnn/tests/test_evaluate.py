"""Scoring helpers: divergence metrics, split evaluation, CDF export."""

import json

import numpy as np
import pytest
import torch

from gnnpc.evaluate import (evaluate_split, fifth_percentile_loss,
                            histogram_divergence, predict_powers,
                            write_cdf_csv, write_report)
from gnnpc.model import PowerControlNet


@pytest.fixture(scope="module")
def model(scenario_data):
    c = scenario_data.constants
    torch.manual_seed(1)
    return PowerControlNet(c.m, c.k_u, c.k_d,
                           c.user_budget, c.device_budget)


@pytest.fixture(scope="module")
def standardizer(scenario_data):
    return scenario_data.fit_standardizer(range(scenario_data.n_records))


def test_divergence_of_identical_samples_is_zero():
    values = np.linspace(1.0, 9.0, 200)
    assert histogram_divergence(values, values.copy()) == 0.0


def test_divergence_detects_shift_and_stays_finite_when_disjoint():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 1.0, 500)
    shifted = histogram_divergence(a, a + 1.0)
    disjoint = histogram_divergence(a, a + 100.0)
    assert 0.0 < shifted < disjoint < np.inf


def test_divergence_handles_degenerate_support():
    assert histogram_divergence([3.0, 3.0], [3.0, 3.0]) == 0.0
    assert np.isfinite(histogram_divergence([3.0], [3.0, 3.0, 3.0]))


def test_divergence_rejects_empty_samples():
    with pytest.raises(ValueError, match="empty"):
        histogram_divergence([], [1.0])


def test_fifth_percentile_loss_measures_relative_error():
    rng = np.random.default_rng(1)
    a = rng.uniform(1.0, 2.0, 1000)
    assert fifth_percentile_loss(a, a) == 0.0
    assert fifth_percentile_loss(a, 0.9 * a) == pytest.approx(0.1, rel=1e-9)
    assert fifth_percentile_loss([0.0, 0.0], [0.0, 0.0]) == 0.0
    assert fifth_percentile_loss([0.0, 0.0], [1.0, 2.0]) == np.inf


def test_predict_powers_covers_all_indices(model, standardizer,
                                           scenario_data):
    idx = list(range(scenario_data.n_records))
    p, q = predict_powers(model, standardizer, scenario_data, idx, chunk=7)
    assert p.shape == (len(idx), scenario_data.constants.k_u)
    assert q.shape == (len(idx), scenario_data.constants.k_d)
    # chunked and single-shot evaluation agree to rounding
    p_once, q_once = predict_powers(model, standardizer, scenario_data, idx)
    assert np.allclose(p, p_once, rtol=1e-12, atol=0)
    assert np.allclose(q, q_once, rtol=1e-12, atol=0)


def test_evaluate_split_report_is_self_consistent(model, standardizer,
                                                  scenario_data, synthetic):
    idx = synthetic["splits"]["test"]
    report = evaluate_split(model, standardizer, scenario_data, idx,
                            split_name="test")
    assert report["schema"] == "gnnpc-metrics-v1"
    assert report["split"] == "test"
    assert report["n_samples"] == len(idx)
    assert 0.0 <= report["violation_rate"] <= 1.0
    analytical = np.array(report["analytical_min_ee"])
    predicted = np.array(report["predicted_min_ee"])
    expected = [scenario_data.objective[i] for i in idx]
    assert np.allclose(analytical, expected, rtol=0, atol=0)
    assert report["kl_divergence"] == histogram_divergence(analytical,
                                                           predicted)
    assert report["p95_loss"] == fifth_percentile_loss(analytical, predicted)


def test_evaluate_split_rejects_empty_split(model, standardizer,
                                            scenario_data):
    with pytest.raises(ValueError, match="empty"):
        evaluate_split(model, standardizer, scenario_data, [])


def test_cdf_csv_format(tmp_path):
    values = [3.5, 1.25, 2.0]
    path = tmp_path / "series.csv"
    write_cdf_csv(values, "predicted", path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# cfcoex-cdf label=predicted feasible_fraction=1.0"
    assert lines[1] == "value,cdf,feasible_flag"
    rows = [line.split(",") for line in lines[2:]]
    assert [float(r[0]) for r in rows] == sorted(values)
    assert [float(r[1]) for r in rows] == [1 / 3, 2 / 3, 1.0]
    assert all(r[2] == "1" for r in rows)


def test_write_report_roundtrips(tmp_path):
    report = {"schema": "gnnpc-metrics-v1", "kl_divergence": 0.25,
              "predicted_min_ee": [1.0, 2.0]}
    path = tmp_path / "report.json"
    write_report(report, path)
    assert json.loads(path.read_text()) == report
