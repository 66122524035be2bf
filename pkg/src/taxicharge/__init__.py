"""Robust charging-station network planning for taxi fleets."""

__version__ = "0.1.0"
