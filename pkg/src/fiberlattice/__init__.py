"""Simulation and analysis of a tunable optical lattice coupled to an optical nanofiber."""

__version__ = "0.1.0"
