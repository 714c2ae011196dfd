"""Kernel density estimation on products of spheres."""

__version__ = "0.1.0"
