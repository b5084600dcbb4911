"""CPU 3D Gaussian splatting for unconstrained photo collections.

Core pieces: a differentiable tile-based rasterizer, per-image latent
appearance conditioning, robust transient masking, a spherical-harmonics
background model, a training loop with densification, and a render service
with a browser viewer.
"""

from .estimator import WildSplat

__all__ = ["WildSplat"]
__version__ = "0.1.0"
