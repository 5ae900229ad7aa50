"""Kinetic limit of a driven lattice particle coupled to thermal reservoirs."""

__version__ = "0.1.0"
