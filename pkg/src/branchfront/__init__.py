"""Simulation and numerical certification of bistable fronts in branched planar domains."""

__version__ = "0.1.0"
