"""Hardware-aware block surgery for small restoration networks."""

__version__ = "0.1.0"
