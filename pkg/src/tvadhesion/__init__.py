"""Implicit time discretization of a thermo-viscoelastic adhesive-contact
system with nonlocal surface interactions."""

__version__ = "0.1.0"
