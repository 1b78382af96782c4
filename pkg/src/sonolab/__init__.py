"""Sonolab: ultrasound beamforming with sub-Nyquist sampling, sparse arrays,
sparse recovery and microbubble super-resolution."""

__version__ = "0.1.0"

from . import errors, geometry, kernels  # noqa: E402,F401

__all__ = ["__version__", "errors", "geometry", "kernels"]
