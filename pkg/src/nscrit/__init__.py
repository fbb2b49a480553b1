"""Spectral Navier-Stokes diagnostics for scale-invariant regularity criteria."""

from .cylinders import ParabolicCylinder, Trajectory, WindowError
from .spectral_core import Grid, ScalarField, VectorField

__all__ = ["Grid", "ParabolicCylinder", "ScalarField", "Trajectory", "VectorField", "WindowError"]
__version__ = "0.1.0"
