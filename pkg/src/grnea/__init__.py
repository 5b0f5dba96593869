"""Generative reverse nets: image-space surrogates for evolutionary design optimization."""

__version__ = "0.1.0"
