"""Optimal destabilisers, semistable decompositions and 1-D Calabi flow on measured polytopes."""

__version__ = "0.1.0"
