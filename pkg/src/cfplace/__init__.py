"""Access-point placement for cell-free massive MIMO via vector quantization."""

__version__ = "0.1.0"
