"""Effective conductivity and tracer transport in multiscale periodic flows."""

__version__ = "0.1.0"
