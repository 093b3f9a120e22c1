"""Generative curriculum sampling for neural TSP solvers."""

__version__ = "0.1.0"
