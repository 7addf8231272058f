"""Wasserstein barycenters on compact manifolds, with numerical certificates."""

__version__ = "0.1.0"
