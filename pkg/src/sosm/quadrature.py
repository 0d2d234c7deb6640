"""Quadrature on the reference triangle and on edges.

Triangle rules are collapsed (Duffy) tensor products of Gauss-Jacobi and
Gauss-Legendre rules, exact for polynomials up to the requested degree.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import InvalidArgumentError

MAX_DEGREE = 10


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates with weights summing to 1/2."""

    points: np.ndarray  # (nq, 3)
    weights: np.ndarray  # (nq,)
    degree: int

    @property
    def xy(self):
        """Reference-triangle coordinates of the points."""
        return self.points[:, 1:]


@lru_cache(maxsize=None)
def quadrature(degree):
    """Rule on the reference triangle exact to polynomial ``degree`` (1..10)."""
    if int(degree) != degree or not 1 <= degree <= MAX_DEGREE:
        raise InvalidArgumentError(f"unsupported quadrature degree {degree!r}")
    m = (int(degree) + 2) // 2
    tj, wj = roots_jacobi(m, 1.0, 0.0)
    tl, wl = np.polynomial.legendre.leggauss(m)
    u = 0.5 * (1.0 + tj)
    wu = wj / 4.0
    v = 0.5 * (1.0 + tl)
    wv = wl / 2.0
    U, Vv = np.meshgrid(u, v, indexing="ij")
    x = U.ravel()
    y = ((1.0 - U) * Vv).ravel()
    w = np.outer(wu, wv).ravel()
    pts = np.stack([1.0 - x - y, x, y], axis=1)
    pts.flags.writeable = False
    w.flags.writeable = False
    return QuadratureRule(points=pts, weights=w, degree=int(degree))


@lru_cache(maxsize=None)
def edge_quadrature(npoints):
    """Gauss-Legendre points ``s`` in [-1, 1] and weights summing to 2."""
    s, w = np.polynomial.legendre.leggauss(npoints)
    s.flags.writeable = False
    w.flags.writeable = False
    return s, w
