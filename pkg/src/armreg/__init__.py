"""Asymptotical regularization (Kalman-Bucy / 3DVAR) for linear inverse problems with white noise."""

__version__ = "0.1.0"
