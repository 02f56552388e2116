"""Spatial relay networks with capacity constraints: simulation, fluid limits and entropy bounds."""

__version__ = "0.1.0"
