"""Trajectory-level empowerment on a pushing-boxes world."""

__version__ = "0.1.0"
