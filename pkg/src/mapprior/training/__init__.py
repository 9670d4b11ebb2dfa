"""Matching, losses and the training loop."""

from .losses import LossReport, compute_losses, focal_loss, normalize_gt_points
from .matcher import MatchResult, match, match_cost, solve_assignment
from .trainer import TrainResult, batch_losses, load_checkpoint, prepare_scenes, save_checkpoint, train

__all__ = [
    "LossReport",
    "MatchResult",
    "TrainResult",
    "batch_losses",
    "compute_losses",
    "focal_loss",
    "load_checkpoint",
    "match",
    "match_cost",
    "normalize_gt_points",
    "prepare_scenes",
    "save_checkpoint",
    "solve_assignment",
    "train",
]
