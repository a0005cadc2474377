"""Capacity-scaling toolkit for random 3D erasure networks."""

__version__ = "0.1.0"
