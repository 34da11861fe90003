"""Continuum models of gated twisted bilayer graphene interfaces and junctions."""

__version__ = "0.1.0"
