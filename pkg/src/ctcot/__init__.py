"""CTC and optimal-transport alignment losses with a small Siamese trainer."""

__version__ = "0.1.0"
