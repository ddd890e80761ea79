"""Closed-loop, language-conditioned grasp planning in simulated clutter."""

__version__ = "0.1.0"
