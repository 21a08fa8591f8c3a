"""Bilinear CNN with a constrained triplet objective: library and CLI."""

__version__ = "0.1.0"
