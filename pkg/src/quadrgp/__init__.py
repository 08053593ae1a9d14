"""Quadrotor NMPC with an online recursive-GP drag model."""

__version__ = "0.1.0"
