"""Simulation of selection-based and TD-learning crawler fleets on a dynamic web."""

__version__ = "0.1.0"
