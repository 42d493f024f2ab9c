"""Consistency-aware active learning with predecessor distillation."""

__version__ = "0.1.0"
