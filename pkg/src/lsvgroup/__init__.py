"""Compact group extensions of LSV intermittent maps: simulation, inducing, twisted transfer operators."""

__version__ = "0.1.0"
