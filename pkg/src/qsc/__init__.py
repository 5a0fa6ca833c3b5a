"""Finite-grid quantum stochastic calculus: Ito algebras, kernels, integrals and QSDEs."""

__version__ = "0.1.0"
