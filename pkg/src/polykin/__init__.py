"""Polyatomic Boltzmann toolkit: Borgnakke-Larsen collisions, kinetic functionals and DSMC."""

__version__ = "0.1.0"
