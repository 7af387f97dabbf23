"""Numerical laboratory for EIT in buffer-gas vapor cells with coherence diffusion."""
__version__ = "0.1.0"
