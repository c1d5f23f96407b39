"""Meta learning to rank for sparsely labeled queries."""

__version__ = "0.1.0"
