"""Latent-subspace bandits: offline estimation plus online acceleration."""

from .kernels import active_backend

__version__ = "0.1.0"
__all__ = ["active_backend", "__version__"]
