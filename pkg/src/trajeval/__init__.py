"""Offline evaluation and data curation for web-agent trajectories."""

__version__ = "0.1.0"
