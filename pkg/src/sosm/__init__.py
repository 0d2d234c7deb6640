"""Mixed finite element solver for augmented Stokes-Onsager-Stefan-Maxwell flow.

Submodules: :mod:`~sosm.mesh`, :mod:`~sosm.quadrature`, :mod:`~sosm.fe`,
:mod:`~sosm.thermo`, :mod:`~sosm.assembly`, :mod:`~sosm.solver`,
:mod:`~sosm.verify`, :mod:`~sosm.cases`, :mod:`~sosm.io` and the command line
in :mod:`~sosm.cli`.
"""

__version__ = "0.1.0"
