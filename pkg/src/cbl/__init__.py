"""Curved Boolean logic: contextual satisfiability, propagation and holonomy tools."""

__version__ = "0.1.0"
