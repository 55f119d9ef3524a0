"""Attenuation-artifact A-line classification for intracoronary OCT."""

__version__ = "0.1.0"
