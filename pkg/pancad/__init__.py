"""Panoptic symbol spotting on vector CAD drawings."""

__version__ = "0.1.0"
