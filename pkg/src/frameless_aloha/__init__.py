"""Finite-length reliability analysis, simulation and optimization of frameless ALOHA."""

__version__ = "0.1.0"
