"""Stochastic video generation with fixed and learned latent priors."""

__version__ = "0.1.0"
