"""Decomposition-based multi-scale patch-attention anomaly detection for multivariate time series."""

__version__ = "0.1.0"
