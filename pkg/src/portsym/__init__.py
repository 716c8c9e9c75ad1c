"""Portable symbolic models learned from option executions."""
__version__ = "0.1.0"
