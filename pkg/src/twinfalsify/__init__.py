"""Falsify digital twins against observational trajectories with causal bounds."""

__version__ = "0.1.0"
