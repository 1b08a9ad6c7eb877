"""Segregation limits of strongly competing species on the unit disk."""

__version__ = "0.1.0"
