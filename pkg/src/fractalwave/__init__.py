"""Wave equations for fractal Laplacians of self-similar measures."""

__version__ = "0.1.0"
