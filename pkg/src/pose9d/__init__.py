"""Category-level 9D object pose estimation from a single RGB image.

A conditional diffusion model recovers translation, rotation and metric size
of household objects from coarse monocular depth, with a from-scratch numpy
network stack, synthetic data generation and an evaluation CLI.
"""

__version__ = "0.1.0"
