"""Batch toolkit for pathology VQA instruction datasets, evaluation metrics,
alignment-loss verification, and clinical few-shot splits."""

__version__ = "0.1.0"
