"""Barrier-conforming sparse-DAG Gaussian processes."""

__version__ = "0.1.0"
