"""Spreading speeds and asymptotic spreading sets for reaction-diffusion
equations in periodic media, verified against direct PDE simulation."""

__version__ = "0.1.0"
