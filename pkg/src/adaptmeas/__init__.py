"""Adaptive partial measurements of a nuclear spin via an electron ancilla."""

__version__ = "0.1.0"
