"""Infinite-horizon optimal control of 1D parabolic PDEs via canonical systems."""

__version__ = "0.1.0"
