"""Cascade wave systems on an interval: simulation, energy hierarchy,
observability estimates and HUM control synthesis."""

__version__ = "0.1.0"
