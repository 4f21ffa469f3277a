"""Burned-area delineation from Sentinel-2-like imagery, desk scale.

Synthetic scene generation, preprocessing to a common 10 m grid, spectral
index baselines, a small multitask segmentation network trained from
scratch, tiled seam-free inference, and macro-F1/IoU evaluation.
"""

__version__ = "0.1.0"
