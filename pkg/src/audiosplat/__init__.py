"""Audio-conditioned deformable Gaussian splatting, CPU-only and desk-scale."""

__version__ = "0.1.0"
