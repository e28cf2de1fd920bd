"""Finite-element solver and verification harness for unsteady Stokes flow
with a nonmonotone slip-friction boundary condition."""

__version__ = "0.1.0"
