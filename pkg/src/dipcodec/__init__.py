"""Dipole-fitting EEG compression codec."""

__version__ = "0.1.0"
