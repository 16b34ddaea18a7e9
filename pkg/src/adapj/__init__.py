"""Adaptive extended Jacobian control for soft manipulators, with baselines and a
simulated benchmark harness."""

__version__ = "0.1.0"
