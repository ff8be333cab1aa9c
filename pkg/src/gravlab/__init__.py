"""Pseudo-spectral workbench for 1-D infinite-depth gravity water waves."""

__version__ = "0.1.0"
