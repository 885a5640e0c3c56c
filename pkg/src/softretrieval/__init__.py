"""Soft-biometric person retrieval in calibrated surveillance video."""

__version__ = "0.1.0"
