"""Longitudinal restricted latent class models with covariate-driven transitions."""

__version__ = "0.1.0"
