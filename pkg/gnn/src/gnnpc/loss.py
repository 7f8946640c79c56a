"""Training loss: power/objective regression plus a rate-floor penalty.

Rates and energy efficiencies are recomputed from the per-record SINR
coefficient families carried by the dataset, so the loss is self-contained
— no analytical solver runs during training. The composite objective mixes
a mean squared error on log powers with one on the per-device energy
efficiencies (the solver's maximin optimum equalises the devices, so every
device target sits at the per-sample optimum and each prediction head
receives a gradient), and (optionally) an augmented penalty
`dual * v + penalty/2 * v**2` on the relative user rate-floor shortfall
`v = max(0, floor - min_u rate_u) / floor`, whose dual variable is
ascended by the trainer after every step. Working with the relative
shortfall keeps the penalty weights floor-invariant and the dual variable
O(1): in absolute rate units the dual's increments are scaled by the
inverse squared floor and it effectively freezes.
"""

import math

import torch

LOG2 = math.log(2.0)


def user_rates(p, q, moments, constants):
    """Per-user rates (B, K_u) in bits/s at powers (p, q) in watts."""
    den = (moments["upsilon"] * p
           + torch.einsum("buk,bk->bu", moments["kappa"], p)
           + torch.einsum("bud,bd->bu", moments["varkappa"], q)
           + moments["xi"])
    sinr = moments["delta"] * p / den
    return constants.symbol_rate * torch.log1p(sinr) / LOG2


def device_efficiencies(p, q, moments, constants):
    """Per-device energy efficiencies (B, K_d) in bits/J at (p, q)."""
    den = (moments["nu"] * q
           + torch.einsum("bdk,bk->bd", moments["eps_dd"], q)
           + torch.einsum("bdu,bu->bd", moments["eps_du"], p)
           + moments["chi"])
    sinr = moments["lam"] * q / den
    se = torch.log1p(sinr) / LOG2
    if constants.regime == "fbl":
        disp = torch.sqrt(2.0 * sinr / (1.0 + sinr))
        se = torch.relu(se - constants.back_off * disp)
    elif constants.regime != "shannon":
        raise ValueError(f"unknown regime '{constants.regime}'")
    prelog = constants.symbol_rate / constants.spread
    return prelog * se / (constants.amp_inefficiency * q
                          + constants.static_power)


def rate_shortfall(p, q, moments, constants):
    """Per-sample rate-floor violation (B,): how far the worst user rate
    falls below the floor, zero when the floor is met."""
    worst = user_rates(p, q, moments, constants).min(dim=1).values
    return torch.relu(constants.user_rate_floor - worst)


def composite_loss(p, q, batch, constants, power_weight, constraint_weight,
                   dual, penalty, objective_scale=1.0):
    """Weighted training loss and its parts for one batch of predictions.

    `objective_scale` expresses the efficiency mismatch in standard scores
    (the trainer passes the training split's objective deviation): log
    powers and efficiencies then live on comparable scales, so the mixing
    weight keeps its meaning. The default of 1 leaves raw physical units.

    Returns a dict with "total" (differentiable) plus detached diagnostics:
    the two regression terms, the mean shortfall in bits/s and relative to
    the floor (the latter feeds the dual ascent), and the penalty term.
    """
    if not 0.0 <= power_weight <= 1.0:
        raise ValueError("power_weight must lie in [0, 1]")
    if objective_scale <= 0.0:
        raise ValueError("objective_scale must be positive")
    theta = torch.cat([p, q], dim=1)
    power_mse = ((theta.log() - batch.theta.log()) ** 2).mean()
    predicted = device_efficiencies(p, q, batch.moments, constants)
    k_u = p.shape[1]
    target = device_efficiencies(batch.theta[:, :k_u], batch.theta[:, k_u:],
                                 batch.moments, constants)
    objective_mse = (((predicted - target) / objective_scale) ** 2).mean()
    shortfall = rate_shortfall(p, q, batch.moments, constants)
    relative = shortfall / constants.user_rate_floor
    augmented = (dual * relative + 0.5 * penalty * relative ** 2).mean()
    total = (power_weight * power_mse
             + (1.0 - power_weight) * objective_mse
             + constraint_weight * augmented)
    return {"total": total,
            "power_mse": float(power_mse.detach()),
            "objective_mse": float(objective_mse.detach()),
            "mean_shortfall": float(shortfall.detach().mean()),
            "mean_relative_shortfall": float(relative.detach().mean()),
            "penalty_term": float(augmented.detach())}
