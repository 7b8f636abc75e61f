"""Autoregressive conditional diffusion benchmark for wake-flow surrogates."""

__version__ = "0.1.0"
