"""Procedural meta-language and maze-world benchmark engine."""

__version__ = "0.1.0"
