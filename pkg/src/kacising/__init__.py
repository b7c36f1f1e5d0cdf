"""Ising model with a quadratic Kac penalty: exact oracles at tiny sizes,
Monte Carlo at desk scale, numerical thermodynamics with modified Legendre
duality, and multiscale phase-mixture diagnostics."""

__version__ = "0.1.0"
