"""Finite abstractions of discrete-time dynamical systems and rate-distortion lower bounds."""

__version__ = "0.1.0"
