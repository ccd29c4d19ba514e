"""Simulation of compute-in-memory device noise: training, evaluation and architecture search."""

__version__ = "0.1.0"
