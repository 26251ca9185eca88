"""Numerics for the Yule-Lambda nested coalescent."""

__version__ = "0.1.0"
