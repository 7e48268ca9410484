"""Alternating projections between convex sets: perturbation, regularity and set-convergence tooling."""

__version__ = "0.1.0"
