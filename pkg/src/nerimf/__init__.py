"""Numerical laboratory for the mean-field equation with a circulation measure."""
__version__ = "0.1.0"
