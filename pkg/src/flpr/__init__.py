"""Forensic license-plate recognition workbench."""

__version__ = "0.1.0"
