"""Experiment harness: datasets, training, robustness evaluation and checkpoints."""
