"""Coupled-agent stochastic gradient descent simulation and analysis."""

__version__ = "0.1.0"

from . import analysis, bounds, config, dynamics, harness, objectives, stochastic  # noqa: F401
