"""Heralded PDC source with time-multiplexed photon-number-resolving herald: simulation and analysis."""

__version__ = "0.1.0"
