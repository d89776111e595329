"""Desk-scale numerics for volume-preserving intrinsic flat convergence bounds."""

__version__ = "0.1.0"
