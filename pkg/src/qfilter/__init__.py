"""Interference-based regulators: Gaussian-filtered time steps and the lattice phi^8 stabilizer."""

__version__ = "0.1.0"
