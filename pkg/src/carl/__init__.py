"""Relational causal inference over multi-table data."""

__version__ = "0.1.0"
