"""
Numerical laboratory for the renormalized quadratic NLS on the 2D torus
with Gaussian random initial data.
"""

__version__ = "0.1.0"
