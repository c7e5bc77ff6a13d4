"""Solver and verification toolkit for discounted continuous-time Markov decision processes."""

__version__ = "0.1.0"
