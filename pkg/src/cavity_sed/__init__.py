"""Semiclassical stochastic electrodynamics of atoms in a single-mode cavity."""

__version__ = "0.1.0"
