"""Multimodal representation learning with PNS objectives on a synthetic benchmark."""

__version__ = "0.1.0"
