"""Coarse-to-fine active perception on point clouds."""

__version__ = "0.1.0"
