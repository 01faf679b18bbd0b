"""Numerical laboratory for the Sobolev-critical scalar field equation in three dimensions.

    -Delta u + omega u - |u|^{p-1} u - |u|^4 u = 0,   1 < p < 5.

Modules
-------
grid      radial grids, fields, quadrature, stencils and Helmholtz solves
model     parameters, functionals, projections and the Talenti bubble family
shoot     radial shooting for positive decaying solutions
minimize  upper-bound estimates of the Nehari level, threshold and gap probes
spectral  linearised operators, resolvent pairings and the G(alpha) analogue
cli       command-line front end (``nehari-lab``)
"""

from .grid import RadialField, RadialGrid, make_grid
from .model import ModelParams, critical_level, evaluate_functionals, m_infinity

__all__ = [
    "ModelParams",
    "RadialField",
    "RadialGrid",
    "critical_level",
    "evaluate_functionals",
    "m_infinity",
    "make_grid",
]
__version__ = "0.1.0"
