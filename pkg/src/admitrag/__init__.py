"""Retrieval-augmented inquiry-response engine for university admissions."""

__version__ = "0.1.0"
