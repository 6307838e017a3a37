"""Confidence sets for latent group membership in linear panel models."""

__version__ = "0.1.0"
