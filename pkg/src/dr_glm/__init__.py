"""Divide-and-recombine fitting of generalized linear models."""

__version__ = "0.1.0"
