"""Shared fixtures: a small desk-scale scenario (fast solves, fast draws)
and the full default scenario, with cached deployments and moments."""

import numpy as np
import pytest

from cfcoex.channel_stats import compute_stats
from cfcoex.rates import EEParams, MomentSet
from cfcoex.scenario import ScenarioConfig, generate_deployment


def desk_scenario(**overrides):
    """Small but structurally complete scenario: pilot reuse (tau_p=3 for
    five terminals), partial serving sets, short spreading."""
    base = dict(M=3, L=2, K_u=2, K_d=3, M_s=2, N=7)
    base.update(overrides)
    return ScenarioConfig(**base)


@pytest.fixture(scope="session")
def desk_config():
    return desk_scenario()


@pytest.fixture(scope="session")
def desk_instance(desk_config):
    dep = generate_deployment(desk_config, 0)
    stats = compute_stats(dep, desk_config)
    moments = MomentSet.compute(stats, dep, desk_config)
    return desk_config, dep, stats, moments


@pytest.fixture(scope="session")
def default_config():
    return ScenarioConfig()


@pytest.fixture(scope="session")
def default_params(default_config):
    return EEParams.from_config(default_config)


def family_scale_error(closed, empirical):
    """max |closed - empirical| / max |closed| (family-scale relative)."""
    closed = np.asarray(closed, float)
    empirical = np.asarray(empirical, float)
    scale = np.max(np.abs(closed))
    if scale == 0.0:
        return float(np.max(np.abs(empirical)))
    return float(np.max(np.abs(closed - empirical)) / scale)
