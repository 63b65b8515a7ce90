"""Smoothed-halfspace approximation, moment-matching constructions and SQ simulation."""

__version__ = "0.1.0"
