"""Atomic-frequency-comb polarization memory: echo simulation and process tomography."""

__version__ = "0.1.0"
