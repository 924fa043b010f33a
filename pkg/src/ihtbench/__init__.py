"""Iterative hard thresholding, its perturbed variants, and the benchmark harness
that compares them on random sparse-recovery problems."""

__version__ = "0.1.0"
