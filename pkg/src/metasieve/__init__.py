"""Deterministic trial screening and eligibility-weighted meta-analysis."""

__version__ = "0.1.0"
