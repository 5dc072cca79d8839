"""Harness that separates raw-pattern fitting from domain-knowledge use in LLM predictions."""

__version__ = "0.1.0"
