"""cogstream: streaming benchmark and autotuning toolkit for tiled COGs."""

__version__ = "0.1.0"
