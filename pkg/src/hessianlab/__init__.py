"""Viscosity-solution toolkit for complex Hessian equations on the flat torus."""

__version__ = "0.1.0"
