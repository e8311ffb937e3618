"""Temporal event ordering, insertion ranking, and infilling with a small
denoising sequence-to-sequence model plus discriminative baselines."""

__version__ = "0.1.0"
