"""snaklat: continuation toolkit for localized patterns on the square lattice."""

__version__ = "0.1.0"
