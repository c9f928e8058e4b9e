"""Coexistence simulator and SINR statistics for wireless body area networks."""

__version__ = "0.1.0"
