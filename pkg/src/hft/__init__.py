"""Heat-flow transport maps on one-dimensional model spaces."""

__version__ = "0.1.0"
