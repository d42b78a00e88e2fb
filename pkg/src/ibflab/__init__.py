"""Monte Carlo and analytic laboratory for planar isotropic Brownian flows."""

__version__ = "0.1.0"
