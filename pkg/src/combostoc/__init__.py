"""Vectorized-timestep diffusion: training, sampling and path-space analysis."""

from .errors import CombostocError

__all__ = ["CombostocError"]
__version__ = "0.1.0"
