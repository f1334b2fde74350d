"""Contrastive state augmentation training for RL-based sequential recommenders."""

__version__ = "0.1.0"
