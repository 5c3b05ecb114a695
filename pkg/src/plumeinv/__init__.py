"""Airborne methane source inversion with Gaussian plumes and a smooth background."""

__version__ = "0.1.0"
