"""Finite element spaces on triangle meshes.

Supported spaces: continuous Lagrange ``CG1`` and ``CG2``, the discontinuous
vector space ``DG1vec`` and the lowest-order conforming Arnold-Winther
symmetric stress element ``AW`` (24 local degrees of freedom).

Symmetric tensors are stored by their three independent components
``(xx, xy, yy)``.

The Arnold-Winther basis is not affine equivalent, so it is built directly on
each physical cell: the 30 coefficients of a symmetric cubic tensor in a
centred, diameter-scaled monomial frame are fixed by six constraints killing
the quadratic part of the divergence plus the 24 degree-of-freedom
functionals (vertex values, normal-traction moments against ``{1, s}`` on
each globally oriented edge, cell means).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConditioningError, InvalidArgumentError
from .quadrature import edge_quadrature, quadrature

SPACES = ("CG1", "CG2", "DG1vec", "AW")
LOCAL_DIM = {"CG1": 3, "CG2": 6, "DG1vec": 6, "AW": 24}
AW_COND_LIMIT = 1e12

# exponents of the cubic monomial basis; index = position in this list
MONOMIALS = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)]
_QUADRATIC = {(2, 0): 0, (1, 1): 1, (0, 2): 2}


def monomials(xi):
    """Values and first derivatives of the cubic monomials at ``xi[..., 2]``.

    Returns ``(P, dP)`` with shapes ``(..., 10)`` and ``(..., 10, 2)``.
    """
    x = xi[..., 0]
    y = xi[..., 1]
    xp = [np.ones_like(x), x, x * x, x * x * x]
    yp = [np.ones_like(y), y, y * y, y * y * y]
    P = np.stack([xp[a] * yp[b] for a, b in MONOMIALS], axis=-1)
    zero = np.zeros_like(x)
    dx = [a * xp[a - 1] * yp[b] if a else zero for a, b in MONOMIALS]
    dy = [b * xp[a] * yp[b - 1] if b else zero for a, b in MONOMIALS]
    dP = np.stack([np.stack(dx, axis=-1), np.stack(dy, axis=-1)], axis=-1)
    return P, dP


def _div_constraints():
    """(6, 30) matrix extracting the quadratic part of the divergence."""
    C = np.zeros((6, 30))
    for m, (a, b) in enumerate(MONOMIALS):
        if a + b != 3:
            continue
        if a:
            r = _QUADRATIC[(a - 1, b)]
            C[r, 0 * 10 + m] += a  # d/dx s_xx
            C[3 + r, 1 * 10 + m] += a  # d/dx s_xy
        if b:
            r = _QUADRATIC[(a, b - 1)]
            C[r, 1 * 10 + m] += b  # d/dy s_xy
            C[3 + r, 2 * 10 + m] += b  # d/dy s_yy
    return C


_DIV_CONSTRAINTS = _div_constraints()


@dataclass(frozen=True)
class AWBasis:
    """Arnold-Winther basis on a batch of cells.

    ``coef[c, b, k, m]`` is the coefficient of monomial ``m`` in tensor
    component ``k`` of basis function ``b``, in the frame
    ``xi = (x - centre) / scale``.
    """

    coef: np.ndarray  # (C, 24, 3, 10)
    centre: np.ndarray  # (C, 2)
    scale: np.ndarray  # (C,)
    condition: np.ndarray  # (C,)

    def frame(self, x):
        """Scaled coordinates of physical points ``x[C, ..., 2]``."""
        shape = (-1,) + (1,) * (x.ndim - 2) + (2,)
        return (x - self.centre.reshape(shape)) / self.scale.reshape(shape[:-1] + (1,))

    def evaluate(self, x):
        """Values ``(C, 24, np, 3)`` and divergences ``(C, 24, np, 2)`` at ``x[C, np, 2]``."""
        P, dP = monomials(self.frame(x))
        val = np.einsum("cbkm,cqm->cbqk", self.coef, P)
        dP = dP / self.scale[:, None, None, None]
        div0 = np.einsum("cbm,cqm->cbq", self.coef[:, :, 0], dP[..., 0]) + np.einsum(
            "cbm,cqm->cbq", self.coef[:, :, 1], dP[..., 1]
        )
        div1 = np.einsum("cbm,cqm->cbq", self.coef[:, :, 1], dP[..., 0]) + np.einsum(
            "cbm,cqm->cbq", self.coef[:, :, 2], dP[..., 1]
        )
        return val, np.stack([div0, div1], axis=-1)


def aw_dof_matrix(verts, flip, centre, scale):
    """(C, 24, 30) matrix of the degree-of-freedom functionals on monomial coefficients.

    ``flip[c, j]`` is True when the global orientation of local edge ``j``
    runs from local vertex ``j+2`` to ``j+1``.
    """
    C = len(verts)
    L = np.zeros((C, 24, 30))
    xi_v = (verts - centre[:, None]) / scale[:, None, None]
    Pv, _ = monomials(xi_v)  # (C, 3, 10)
    for a in range(3):
        for k in range(3):
            L[:, 3 * a + k, 10 * k : 10 * k + 10] = Pv[:, a]

    s, w = edge_quadrature(4)
    for j in range(3):
        p0 = verts[:, (j + 1) % 3]
        p1 = verts[:, (j + 2) % 3]
        start = np.where(flip[:, j, None], p1, p0)
        end = np.where(flip[:, j, None], p0, p1)
        t = end - start
        t = t / np.linalg.norm(t, axis=1)[:, None]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        pts = 0.5 * (start + end)[:, None] + 0.5 * s[None, :, None] * (end - start)[:, None]
        P, _ = monomials((pts - centre[:, None]) / scale[:, None, None])  # (C, 4, 10)
        for m, leg in enumerate((np.ones_like(s), s)):
            M = 0.5 * np.einsum("q,cqm->cm", w * leg, P)
            r0 = 9 + 4 * j + 0 + m
            r1 = 9 + 4 * j + 2 + m
            L[:, r0, 0:10] = n[:, 0, None] * M
            L[:, r0, 10:20] = n[:, 1, None] * M
            L[:, r1, 10:20] = n[:, 0, None] * M
            L[:, r1, 20:30] = n[:, 1, None] * M

    rule = quadrature(3)
    x = np.einsum("qa,cai->cqi", rule.points, verts)
    P, _ = monomials((x - centre[:, None]) / scale[:, None, None])
    mean = 2.0 * np.einsum("q,cqm->cm", rule.weights, P)
    for k in range(3):
        L[:, 21 + k, 10 * k : 10 * k + 10] = mean
    return L


def aw_local_basis(verts, flip=None, cond_limit=AW_COND_LIMIT):
    """Arnold-Winther basis dual to the 24 local functionals on each cell.

    Parameters
    ----------
    verts : (C, 3, 2) or (3, 2) array of counterclockwise cell vertices
    flip : (C, 3) bool array, optional
        Edge orientation flags, see :func:`aw_dof_matrix`. Defaults to the
        orientation by ascending local index.

    Raises
    ------
    ConditioningError
        If the constrained local system of any cell is numerically singular.
    """
    verts = np.asarray(verts, dtype=float)
    single = verts.ndim == 2
    if single:
        verts = verts[None]
    if flip is None:
        flip = np.array([[False, True, False]] * len(verts))
    flip = np.asarray(flip, dtype=bool).reshape(len(verts), 3)
    centre = verts.mean(axis=1)
    edge_len = np.stack(
        [np.linalg.norm(verts[:, (j + 2) % 3] - verts[:, (j + 1) % 3], axis=1) for j in range(3)], 1
    )
    scale = edge_len.max(axis=1)
    L = aw_dof_matrix(verts, flip, centre, scale)
    S = np.concatenate([np.broadcast_to(_DIV_CONSTRAINTS, (len(verts), 6, 30)), L], axis=1)
    cond = np.linalg.cond(S)
    bad = ~np.isfinite(cond) | (cond > cond_limit)
    if bad.any():
        worst = float(np.max(np.where(np.isfinite(cond), cond, np.inf)))
        raise ConditioningError(
            f"Arnold-Winther local system singular on {int(bad.sum())} cell(s); "
            f"condition estimate {worst:.3e}",
            condition=worst,
        )
    rhs = np.zeros((30, 24))
    rhs[6:] = np.eye(24)
    X = np.linalg.solve(S, np.broadcast_to(rhs, (len(verts), 30, 24)))
    coef = X.transpose(0, 2, 1).reshape(len(verts), 24, 3, 10)
    basis = AWBasis(coef=coef, centre=centre, scale=scale, condition=cond)
    return basis


@dataclass(frozen=True)
class DofMap:
    """Global numbering of a space: ``cell_dofs[c, i]`` for local dof ``i``."""

    space: str
    cell_dofs: np.ndarray
    dim: int
    entity: np.ndarray  # 0 vertex, 1 edge, 2 cell, per global dof


def build_dofmap(space, mesh):
    """Global degree-of-freedom map of ``space`` on ``mesh``."""
    V, E, C = mesh.num_vertices, mesh.num_edges, mesh.num_cells
    if space == "CG1":
        return DofMap(space, mesh.cells.copy(), V, np.zeros(V, dtype=np.int8))
    if space == "CG2":
        dofs = np.concatenate([mesh.cells, V + mesh.cell_edges], axis=1)
        ent = np.concatenate([np.zeros(V, np.int8), np.ones(E, np.int8)])
        return DofMap(space, dofs, V + E, ent)
    if space == "DG1vec":
        dofs = 6 * np.arange(C)[:, None] + np.arange(6)[None]
        return DofMap(space, dofs, 6 * C, np.full(6 * C, 2, np.int8))
    if space == "AW":
        vdofs = 3 * mesh.cells[:, :, None] + np.arange(3)[None, None]  # (C, 3, 3)
        edofs = 3 * V + 4 * mesh.cell_edges[:, :, None] + np.arange(4)[None, None]
        idofs = 3 * V + 4 * E + 3 * np.arange(C)[:, None] + np.arange(3)[None]
        dofs = np.concatenate([vdofs.reshape(C, 9), edofs.reshape(C, 12), idofs], axis=1)
        ent = np.concatenate(
            [np.zeros(3 * V, np.int8), np.ones(4 * E, np.int8), np.full(3 * C, 2, np.int8)]
        )
        return DofMap(space, dofs, 3 * V + 4 * E + 3 * C, ent)
    raise InvalidArgumentError(f"unknown space {space!r}; expected one of {SPACES}")


@dataclass(frozen=True)
class Tabulation:
    """Basis data at quadrature points of every cell.

    ``values`` has shape ``(C, nb, nq, rank)`` (rank 1 for scalars, 2 for
    vectors, 3 for symmetric tensors); ``grads`` ``(C, nb, nq, 2)`` for the
    Lagrange spaces; ``divs`` ``(C, nb, nq, 2)`` for ``AW``.
    """

    values: np.ndarray
    grads: np.ndarray | None
    divs: np.ndarray | None
    x: np.ndarray  # physical points (C, nq, 2)
    dx: np.ndarray  # quadrature weights times Jacobian, (C, nq)


class Geometry:
    """Affine maps of all cells of a mesh."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.verts = mesh.vertices[mesh.cells]  # (C, 3, 2)
        J = np.stack([self.verts[:, 1] - self.verts[:, 0], self.verts[:, 2] - self.verts[:, 0]], axis=2)
        self.J = J
        self.detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        invJ = np.linalg.inv(J)
        g1, g2 = invJ[:, 0], invJ[:, 1]
        self.grad_bary = np.stack([-(g1 + g2), g1, g2], axis=1)  # (C, 3, 2)

    def points(self, bary):
        return np.einsum("qa,cai->cqi", bary, self.verts)


class FunctionSpace:
    """A space on a mesh with its dof map and cached tabulations."""

    def __init__(self, mesh, kind):
        if kind not in SPACES:
            raise InvalidArgumentError(f"unknown space {kind!r}; expected one of {SPACES}")
        self.mesh = mesh
        self.kind = kind
        self.dofmap = build_dofmap(kind, mesh)
        self._tab = {}

    @property
    def dim(self):
        return self.dofmap.dim

    @property
    def cell_dofs(self):
        return self.dofmap.cell_dofs

    @cached_property
    def geometry(self):
        return Geometry(self.mesh)

    @cached_property
    def aw(self):
        flip = self.mesh.cell_edge_signs < 0
        return aw_local_basis(self.geometry.verts, flip)

    def tabulate(self, rule):
        key = rule.degree
        if key not in self._tab:
            self._tab[key] = self._tabulate_bary(rule.points, rule.weights)
        return self._tab[key]

    def _tabulate_bary(self, bary, weights):
        geo = self.geometry
        x = geo.points(bary)
        dx = np.abs(geo.detJ)[:, None] * weights[None, :]
        values, grads, divs = self.basis_at(bary, x)
        return Tabulation(values=values, grads=grads, divs=divs, x=x, dx=dx)

    def basis_at(self, bary, x=None, cells=None):
        """Basis data at barycentric points ``bary``.

        ``bary`` is ``(np, 3)`` (same points in every cell) or ``(C', np, 3)``
        together with the cell subset ``cells``.
        """
        geo = self.geometry
        cells = np.arange(self.mesh.num_cells) if cells is None else np.asarray(cells)
        if bary.ndim == 2:
            bary = np.broadcast_to(bary, (len(cells),) + bary.shape)
        if x is None:
            x = np.einsum("cqa,cai->cqi", bary, geo.verts[cells])
        gl = geo.grad_bary[cells]  # (C, 3, 2)
        if self.kind == "CG1":
            values = bary.transpose(0, 2, 1)[..., None]
            grads = np.broadcast_to(gl[:, :, None, :], (len(cells), 3, bary.shape[1], 2))
            return values, grads, None
        if self.kind == "CG2":
            lam = bary.transpose(0, 2, 1)  # (C, 3, nq)
            vals = [lam[:, a] * (2 * lam[:, a] - 1) for a in range(3)]
            grads = [(4 * lam[:, a] - 1)[..., None] * gl[:, a, None, :] for a in range(3)]
            for j in range(3):
                b, c = (j + 1) % 3, (j + 2) % 3
                vals.append(4 * lam[:, b] * lam[:, c])
                grads.append(
                    4 * (lam[:, c, :, None] * gl[:, b, None, :] + lam[:, b, :, None] * gl[:, c, None, :])
                )
            return np.stack(vals, 1)[..., None], np.stack(grads, 1), None
        if self.kind == "DG1vec":
            lam = bary.transpose(0, 2, 1)
            values = np.zeros((len(cells), 6, bary.shape[1], 2))
            for k in range(2):
                values[:, 3 * k : 3 * k + 3, :, k] = lam
            return values, None, None
        aw = self.aw
        sub = AWBasis(aw.coef[cells], aw.centre[cells], aw.scale[cells], aw.condition[cells])
        values, divs = sub.evaluate(x)
        return values, None, divs

    def evaluate(self, coeffs, rule):
        """Field values (and derivative) at quadrature points: ``(C, nq, rank)``."""
        tab = self.tabulate(rule)
        local = np.asarray(coeffs)[self.cell_dofs]  # (C, nb)
        val = np.einsum("cb,cbqk->cqk", local, tab.values)
        der = tab.grads if tab.grads is not None else tab.divs
        d = None if der is None else np.einsum("cb,cbqk->cqk", local, der)
        return val, d

    def evaluate_at(self, coeffs, cells, bary):
        """Field values and derivative at points given per listed cell."""
        values, grads, divs = self.basis_at(bary, cells=cells)
        local = np.asarray(coeffs)[self.cell_dofs[cells]]
        val = np.einsum("cb,cbqk->cqk", local, values)
        der = grads if grads is not None else divs
        d = None if der is None else np.einsum("cb,cbqk->cqk", local, der)
        return val, d


def tabulate(space, mesh, rule):
    """Tabulate ``space`` on every cell of ``mesh`` at the points of ``rule``."""
    return FunctionSpace(mesh, space).tabulate(rule)


def interpolate(space, func):
    """Canonical interpolant of ``func`` into ``space``.

    ``func`` maps points ``(N, 2)`` to values ``(N,)``, ``(N, 2)`` or, for
    ``AW``, symmetric tensors ``(N, 3)`` in ``(xx, xy, yy)`` order. ``DG1vec``
    uses the L2 projection, the others their degree-of-freedom functionals.
    """
    mesh = space.mesh
    if space.kind == "CG1":
        return np.asarray(func(mesh.vertices), dtype=float)
    if space.kind == "CG2":
        mids = mesh.vertices[mesh.edges].mean(axis=1)
        return np.concatenate([func(mesh.vertices), func(mids)]).astype(float)
    if space.kind == "DG1vec":
        rule = quadrature(8)
        tab = space.tabulate(rule)
        f = func(tab.x.reshape(-1, 2)).reshape(tab.x.shape)
        M = np.einsum("cq,cbqk,cdqk->cbd", tab.dx, tab.values, tab.values)
        rhs = np.einsum("cq,cbqk,cqk->cb", tab.dx, tab.values, f)
        return np.linalg.solve(M, rhs[..., None])[..., 0].ravel()
    geo = space.geometry
    out = np.zeros(space.dim)
    out[: 3 * mesh.num_vertices] = np.asarray(func(mesh.vertices)).ravel()
    s, w = edge_quadrature(6)
    e0 = mesh.vertices[mesh.edges[:, 0]]
    e1 = mesh.vertices[mesh.edges[:, 1]]
    n = mesh.edge_normals()
    pts = 0.5 * (e0 + e1)[:, None] + 0.5 * s[None, :, None] * (e1 - e0)[:, None]
    S = np.asarray(func(pts.reshape(-1, 2))).reshape(len(e0), len(s), 3)
    tn = np.stack(
        [S[..., 0] * n[:, None, 0] + S[..., 1] * n[:, None, 1], S[..., 1] * n[:, None, 0] + S[..., 2] * n[:, None, 1]],
        axis=-1,
    )
    V = mesh.num_vertices
    for k in range(2):
        for m, leg in enumerate((np.ones_like(s), s)):
            out[3 * V + 4 * np.arange(mesh.num_edges) + 2 * k + m] = 0.5 * tn[..., k] @ (w * leg)
    rule = quadrature(8)
    x = geo.points(rule.points)
    S = np.asarray(func(x.reshape(-1, 2))).reshape(x.shape[0], x.shape[1], 3)
    means = 2.0 * np.einsum("q,cqk->ck", rule.weights, S)
    out[3 * V + 4 * mesh.num_edges :] = means.ravel()
    return out
