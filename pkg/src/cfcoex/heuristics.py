"""Baseline power-control policies and constraint verdicts.

Policies here are closed-form: full budgets, or fractional compensation of
the large-scale fading (aggregate over the serving set, or strongest serving
AP only). They check nothing themselves; mark_feasible renders the verdict
against the configured floors without repairing anything.
"""

from dataclasses import dataclass

import numpy as np

from . import rates
from .rates import EEParams, PowerVector


def upc(config):
    """Uniform power control: every terminal at its class budget."""
    return PowerVector(p=np.full(config.K_u, config.P_u_max),
                       q=np.full(config.K_d, config.Q_d_max))


def gfpc(config, dep, kappa=-0.5):
    """Generalized fractional power control on the aggregate serving-set
    fading; kappa=0 reduces to upc, kappa=-1 equalizes received powers."""
    if not -1.0 <= kappa <= 1.0:
        raise ValueError("kappa must lie in [-1, 1]")
    agg_u = np.einsum("mu,mu->u", dep.a_mask.astype(float), dep.alpha)
    agg_d = np.einsum("md,md->d", dep.b_mask.astype(float), dep.beta)
    if np.any(agg_u <= 0) or np.any(agg_d <= 0):
        raise ValueError("aggregate serving fading must be positive")
    coef_u = agg_u ** kappa
    coef_d = agg_d ** kappa
    ceiling = max(coef_u.max(), coef_d.max())  # shared cap keeps both classes in budget
    return PowerVector(p=config.P_u_max * coef_u / ceiling,
                       q=config.Q_d_max * coef_d / ceiling)


def fpc(config, dep, kappa=-0.5):
    """Fractional power control on the strongest serving AP's fading only."""
    if not -1.0 <= kappa <= 1.0:
        raise ValueError("kappa must lie in [-1, 1]")
    best_u = (dep.a_mask * dep.alpha).max(axis=0)
    best_d = (dep.b_mask * dep.beta).max(axis=0)
    if np.any(best_u <= 0) or np.any(best_d <= 0):
        raise ValueError("strongest serving fading must be positive")
    coef_u = best_u ** kappa
    coef_d = best_d ** kappa
    ceiling = max(coef_u.max(), coef_d.max())
    return PowerVector(p=config.P_u_max * coef_u / ceiling,
                       q=config.Q_d_max * coef_d / ceiling)


@dataclass
class FeasibilityReport:
    """Constraint verdict at one power vector; slacks are relative."""

    feasible: bool
    slacks: dict      # name -> ndarray of relative slacks (>= 0 means met)
    violated: list    # names of constraint families with slack < -tol


def mark_feasible(theta, moments, config, regime="fbl", *, params=None,
                  tol=1e-6):
    """Check-and-mark verdict for the power-budget boxes, both rate floors,
    and the device SINR floor. No repair is attempted. Pass a custom
    `params` to judge against overridden rate prelogs.
    """
    if params is None:
        params = EEParams.from_config(config)
    perf = rates.terminal_performance(theta, moments, config, regime, params)

    p = np.asarray(theta.p, float)
    q = np.asarray(theta.q, float)

    slack_c1 = np.minimum(q, config.Q_d_max - q) / config.Q_d_max
    slack_c2 = np.minimum(p, config.P_u_max - p) / config.P_u_max
    slack_c3 = (perf["device_rate"] - config.R_mmtc_min) / config.R_mmtc_min
    slack_c4 = (perf["user_rate"] - config.R_embb_min) / config.R_embb_min
    slack_c5 = (perf["device_sinr"] - config.S_min) / max(config.S_min, 1.0)

    slacks = {"C1": slack_c1, "C2": slack_c2, "C3": slack_c3,
              "C4": slack_c4, "C5": slack_c5}
    violated = [name for name, s in sorted(slacks.items()) if np.min(s) < -tol]
    return FeasibilityReport(feasible=not violated, slacks=slacks,
                             violated=violated)
