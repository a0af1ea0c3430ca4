"""Constraint-aware diffusion models for retail planogram synthesis."""

__version__ = "0.1.0"
