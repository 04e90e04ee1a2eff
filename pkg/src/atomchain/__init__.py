"""Claim verification over scientific tables with staged skill chains."""

__version__ = "0.1.0"
