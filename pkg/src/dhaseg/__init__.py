"""Discover-Hallucinate-Adapt pipeline on a synthetic compound-domain benchmark."""

__version__ = "0.1.0"
