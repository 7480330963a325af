"""Lie point symmetries and invariant solutions of the one-factor commodity model."""

__version__ = "0.1.0"
