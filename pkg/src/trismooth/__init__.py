"""High-order smooth surfaces from watertight triangulations.

Builds a C-infinity surface near a watertight (linear or quadratic)
triangulation as the 1/2 level set of a mollified volume indicator,
evaluated through a boundary integral with tree-accelerated summation,
and represents it as an atlas of high-order polynomial charts.
"""

__version__ = "0.1.0"
