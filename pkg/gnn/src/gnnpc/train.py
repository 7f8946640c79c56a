"""Mini-batch training with dual ascent on the rate-floor penalty.

One model is trained per scenario file. Every optimizer step is followed
by a projected gradient-ascent update of the dual variable using the
batch-averaged relative rate shortfall, with the *initial* penalty weight
as the fixed dual step size; the quadratic penalty weight itself grows
geometrically per epoch up to a cap (set the growth factor to 1 to keep
it fixed) but only enters the loss. Feature standardization is fitted on
the training split only. The per-epoch report records the loss parts, the
dual trajectory, and the validation rate-floor violation rate, and is
reproducible under a fixed seed.
"""

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .loss import composite_loss, rate_shortfall
from .model import PowerControlNet

log = logging.getLogger("gnnpc.train")


@dataclass
class TrainSettings:
    """Knobs of one training run.

    power_weight mixes the log-power regression against the objective
    regression; constraint_weight of 0 disables the rate-floor penalty
    entirely (no dual updates), 1 enables it. The penalty weights the
    squared relative shortfall (the loss works with shortfalls divided by
    the floor); a cap of None resolves to 100x the initial weight.
    lr_schedule "cosine" anneals the learning rate to zero over the run
    (per optimizer step); "constant" leaves it fixed. feature_noise adds
    zero-mean Gaussian jitter of that deviation to the standardized
    features of each training batch (augmentation for small datasets;
    validation and evaluation always see clean features).
    """

    power_weight: float = 0.5
    constraint_weight: float = 1.0
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    lr_schedule: str = "constant"
    feature_noise: float = 0.0
    epochs: int = 100
    batch_size: int = 32
    penalty: float = 1.0
    penalty_growth: float = 1.5
    penalty_cap: float = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.power_weight <= 1.0:
            raise ValueError("power_weight must lie in [0, 1]")
        if self.constraint_weight not in (0.0, 1.0):
            raise ValueError("constraint_weight must be 0 or 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if min(self.learning_rate, self.weight_decay) < 0:
            raise ValueError("rates must be nonnegative")
        if self.feature_noise < 0:
            raise ValueError("feature_noise must be nonnegative")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError("lr_schedule must be 'constant' or 'cosine'")
        if self.penalty < 0:
            raise ValueError("penalty must be nonnegative")


@dataclass
class TrainResult:
    model: PowerControlNet
    standardizer: object
    report: dict
    dual: float = 0.0
    extra: dict = field(default_factory=dict)


def _violation_rate(model, batch, constants):
    """Fraction of samples whose predicted worst user rate misses the floor."""
    with torch.no_grad():
        p, q = model(batch)
        short = rate_shortfall(p, q, batch.moments, constants)
    return float((short > 0).double().mean())


def train_model(data, splits, settings=None):
    """Fit a power-control network on one scenario's training split."""
    if settings is None:
        settings = TrainSettings()
    c = data.constants
    torch.manual_seed(settings.seed)
    model = PowerControlNet(c.m, c.k_u, c.k_d,
                            c.user_budget, c.device_budget)
    optimizer = torch.optim.AdamW(model.parameters(),
                                  lr=settings.learning_rate,
                                  weight_decay=settings.weight_decay)
    standardizer = data.fit_standardizer(splits["train"])
    train_idx = np.asarray(splits["train"], dtype=int)
    val_batch = (data.batch(splits["val"], standardizer)
                 if splits["val"] else None)
    shuffler = np.random.default_rng(settings.seed)
    scheduler = None
    if settings.lr_schedule == "cosine":
        steps_per_epoch = -(-len(train_idx) // settings.batch_size)
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=settings.epochs * steps_per_epoch)

    objective_scale = float(np.std(data.objective[train_idx])) or 1.0
    penalty = settings.penalty
    penalty_cap = (settings.penalty_cap if settings.penalty_cap is not None
                   else 100.0 * penalty)
    dual = 0.0
    epochs = []
    for epoch in range(settings.epochs):
        model.train()
        order = shuffler.permutation(train_idx)
        sums = {"total": 0.0, "power_mse": 0.0, "objective_mse": 0.0,
                "mean_shortfall": 0.0, "mean_relative_shortfall": 0.0,
                "penalty_term": 0.0}
        n_batches = 0
        for start in range(0, len(order), settings.batch_size):
            batch = data.batch(order[start:start + settings.batch_size],
                               standardizer)
            if settings.feature_noise:
                batch.user_x = batch.user_x + (settings.feature_noise
                                               * torch.randn_like(batch.user_x))
                batch.device_x = batch.device_x + (settings.feature_noise
                                                   * torch.randn_like(batch.device_x))
            p, q = model(batch)
            parts = composite_loss(p, q, batch, c,
                                   settings.power_weight,
                                   settings.constraint_weight,
                                   dual, penalty,
                                   objective_scale=objective_scale)
            optimizer.zero_grad()
            parts["total"].backward()
            optimizer.step()
            if scheduler is not None:
                scheduler.step()
            if settings.constraint_weight:
                dual = max(0.0, dual + settings.penalty
                           * parts["mean_relative_shortfall"])
            sums["total"] += float(parts["total"].detach())
            for key in ("power_mse", "objective_mse", "mean_shortfall",
                        "mean_relative_shortfall", "penalty_term"):
                sums[key] += parts[key]
            n_batches += 1

        model.eval()
        entry = {"epoch": epoch,
                 **{k: v / n_batches for k, v in sums.items()},
                 "dual": dual, "penalty": penalty,
                 "learning_rate": optimizer.param_groups[0]["lr"]}
        if val_batch is not None:
            entry["val_violation_rate"] = _violation_rate(model, val_batch, c)
        epochs.append(entry)
        log.info("epoch %d: loss %.4g, shortfall %.4g, dual %.4g%s",
                 epoch, entry["total"], entry["mean_shortfall"], dual,
                 f", val violations {entry['val_violation_rate']:.1%}"
                 if val_batch is not None else "")
        penalty = min(penalty * settings.penalty_growth, penalty_cap)

    report = {"settings": asdict(settings),
              "config_digest": data.header.get("config_digest"),
              "objective_scale": objective_scale,
              "n_train": len(train_idx),
              "n_val": len(splits["val"]),
              "epochs": epochs,
              "final": dict(epochs[-1])}
    return TrainResult(model=model, standardizer=standardizer,
                       report=report, dual=dual)
