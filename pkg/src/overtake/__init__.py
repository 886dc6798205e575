"""Overtaking lab: racing sim, opponent fusion, raceline, PPO."""

__version__ = "0.1.0"
