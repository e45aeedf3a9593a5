"""Forwarding Commitment BGP: path validation, forward bindings and their simulation."""

__version__ = "0.1.0"
