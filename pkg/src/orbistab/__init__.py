"""Orbital stabilization via sliding mode on a stable invariant subspace."""

__version__ = "0.1.0"
