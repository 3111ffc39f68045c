"""Arbitrary-scale image super-resolution with Laplacian frequency representation and recursive deployment."""

__version__ = "0.1.0"
