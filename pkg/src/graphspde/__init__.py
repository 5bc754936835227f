"""Stochastic reaction-diffusion on graphs obtained from planar Hamiltonians."""

__version__ = "0.1.0"
