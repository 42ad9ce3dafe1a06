"""Lyapunov spectra of linear cocycles over the Lorenz flow and its return maps."""

from .kernels import get_backend

__version__ = "0.1.0"

__all__ = ["get_backend", "__version__"]
