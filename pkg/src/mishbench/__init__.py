"""Mish and comparator activations: kernels, a small numpy training engine and experiments."""

__version__ = "0.1.0"
