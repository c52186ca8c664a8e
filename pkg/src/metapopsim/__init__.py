"""Metapopulations on Markovian landscapes: simulation, mean-field limit and persistence."""

__version__ = "0.1.0"
