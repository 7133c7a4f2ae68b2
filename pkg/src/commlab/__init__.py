"""Numerical lab for higher-order correctors and homogenization commutators on periodic lattices."""

__version__ = "0.1.0"
