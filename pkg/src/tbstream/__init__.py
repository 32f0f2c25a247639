"""Desk-scale ontology-driven TB analytics pipeline."""

__version__ = "0.1.0"
