"""FFT-based periodic homogenization with Recursive Projection Method stabilization."""

__version__ = "0.1.0"
