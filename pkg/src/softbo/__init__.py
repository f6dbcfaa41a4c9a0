"""Bayesian-optimization policy search for a simulated pneumatic soft arm."""

__version__ = "0.1.0"
