"""Underwater scene reconstruction with a radiance field and physically
constrained color correction."""

__version__ = "0.1.0"
