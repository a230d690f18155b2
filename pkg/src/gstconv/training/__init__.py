"""Synthetic temporal-order benchmark, SGD trainer and checkpoints."""
from .checkpoint import CheckpointError, default_output_dir, load_checkpoint, save_checkpoint
from .synthetic import DEFAULT_CLASSES, PROGRAMS, REVERSALS, SyntheticDataset, SyntheticSpec, gen_synthetic, render
from .trainer import (NonFiniteLossError, TrainConfig, TrainHistory, accuracy_from_logits, evaluate,
                      gather_frames, predict, sgd_step, train)

__all__ = [
    "CheckpointError", "DEFAULT_CLASSES", "NonFiniteLossError", "PROGRAMS", "REVERSALS", "SyntheticDataset",
    "SyntheticSpec", "TrainConfig", "TrainHistory", "accuracy_from_logits", "default_output_dir", "evaluate",
    "gather_frames", "gen_synthetic", "load_checkpoint", "predict", "render", "save_checkpoint", "sgd_step", "train",
]
