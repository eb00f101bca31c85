"""Trajectory-prediction-driven task pre-offloading for vehicular edge computing."""

__version__ = "0.1.0"
