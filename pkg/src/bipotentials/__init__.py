"""Bipotentials for implicit standard materials.

Convex-analysis primitives, the non-associated Drucker-Prager bipotential,
the implicit time step and an alternating variational solver for small
plane-strain problems.
"""
__version__ = "0.1.0"
