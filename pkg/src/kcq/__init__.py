"""Keyed communication in quantum noise (KCQ): key-generation simulation and security measures."""

__version__ = "0.1.0"
