"""Torsion and eigenvalue shape functionals with Riesz repulsion on grids."""

__version__ = "0.1.0"
