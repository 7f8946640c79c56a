"""Learned power control for the cell-free coexistence toolkit.

Consumes solver-labelled datasets exported by the batch harness (JSON-lines
records plus split manifests), trains a heterogeneous line-graph attention
network to reproduce the optimized power map, and scores the learned
predictions against the analytical energy-efficiency distribution with the
same metrics the harness uses.
"""

from .data import ProblemConstants, ScenarioData, Standardizer, load_splits
from .loss import composite_loss, device_efficiencies, rate_shortfall, user_rates
from .model import PowerControlNet, load_checkpoint, save_checkpoint
from .train import TrainSettings, train_model
from .evaluate import evaluate_split, write_cdf_csv, write_report

__all__ = [
    "ProblemConstants", "ScenarioData", "Standardizer", "load_splits",
    "composite_loss", "device_efficiencies", "rate_shortfall", "user_rates",
    "PowerControlNet", "load_checkpoint", "save_checkpoint",
    "TrainSettings", "train_model",
    "evaluate_split", "write_cdf_csv", "write_report",
]
