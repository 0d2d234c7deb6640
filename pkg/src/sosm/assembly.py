"""Assembly of the linearized symmetric saddle-point system.

Unknowns are ordered ``[mu_1..mu_n | tau | p | v_1..v_n | v | lambda]``
where ``lambda`` holds one mean-value multiplier per chemical potential and
one for the pressure. The global matrix has the form::

    K = [[ Lam  B^T  C^T ]
         [  B   -A    0  ]
         [  C    0    0  ]]

with ``Lam`` the viscous compliance form on the stress, ``B`` the driving
force and stress-divergence coupling, ``A`` the augmented transport form and
``C`` the mean-value rows. Every boundary condition is natural and enters
through the right-hand side.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .errors import BoundaryDataError, InvalidArgumentError, StateError
from .fe import FunctionSpace
from .quadrature import edge_quadrature, quadrature
from .thermo import MaterialModel, concentrations_from_state, transport_matrix

ASSEMBLY_DEGREE = 8
EDGE_POINTS = 6
KAPPA_RELATIVE = 1e-12
COMPAT_TOL = 1e-8

FAMILIES = {1: "CG1", 2: "CG2"}


@dataclass(frozen=True)
class BlockLayout:
    """Offsets of the unknown blocks in the global vector."""

    n: int
    dim_mu: int
    dim_tau: int
    dim_p: int
    dim_vel: int

    @property
    def blocks(self):
        """Ordered ``(name, size)`` pairs."""
        out = [(f"mu{i}", self.dim_mu) for i in range(self.n)]
        out += [("tau", self.dim_tau), ("p", self.dim_p)]
        out += [(f"v{i}", self.dim_vel) for i in range(self.n)]
        out += [("v", self.dim_vel), ("lambda", self.n + 1)]
        return out

    @property
    def offsets(self):
        off, pos = {}, 0
        for name, size in self.blocks:
            off[name] = pos
            pos += size
        return off

    @property
    def size(self):
        return sum(s for _, s in self.blocks)

    @property
    def theta_size(self):
        """Dimension of the potential-stress-pressure part."""
        return self.n * self.dim_mu + self.dim_tau + self.dim_p

    def slice(self, name):
        start = self.offsets[name]
        return slice(start, start + dict(self.blocks)[name])

    def mu(self, i):
        return self.slice(f"mu{i}")

    def vel(self, i):
        """Species velocity ``i``; ``i == n`` addresses the mass-average velocity."""
        return self.slice("v" if i == self.n else f"v{i}")


class Discretization:
    """Function spaces of one element family on a mesh, with cached tabulations.

    ``family`` 1 uses continuous piecewise-linear potentials; family 2 uses
    continuous piecewise-quadratic potentials. Both use the Arnold-Winther
    stress, continuous piecewise-linear pressure and discontinuous
    piecewise-linear vector velocities.
    """

    def __init__(self, mesh, n, family=1):
        if family not in FAMILIES:
            raise InvalidArgumentError(f"unknown element family {family!r}; expected 1 or 2")
        self.mesh = mesh
        self.n = int(n)
        self.family = family
        self.X = FunctionSpace(mesh, FAMILIES[family])
        self.S = FunctionSpace(mesh, "AW")
        self.P = FunctionSpace(mesh, "CG1")
        self.W = FunctionSpace(mesh, "DG1vec")
        self.layout = BlockLayout(self.n, self.X.dim, self.S.dim, self.P.dim, self.W.dim)
        self.rule = quadrature(ASSEMBLY_DEGREE)
        self._cache = {}

    def tab(self, space):
        return space.tabulate(self.rule)

    @property
    def area(self):
        return float(self.mesh.cell_areas().sum())


# ---------------------------------------------------------------- coefficients


@dataclass
class MixtureState:
    """Linearization coefficients of one Picard step.

    ``cell_conc`` holds one concentration per cell and species; the nodal
    field ``rho_inv`` is the reciprocal density at the vertices computed from
    ``vertex_conc``. Mass fractions at a point are ``M_i c_i rho_inv``.
    """

    cell_conc: np.ndarray  # (C, n)
    vertex_conc: np.ndarray  # (V, n)
    rho_inv: np.ndarray  # (V,)
    molar_mass: np.ndarray
    cells: np.ndarray  # mesh connectivity, for evaluating rho_inv
    kappa: float
    floored: int = 0
    iteration: int = 0

    @property
    def n(self):
        return self.cell_conc.shape[1]

    def omega_at(self, P_tab_values, cells=None):
        """Mass fractions ``(C, nq, n)`` from CG1 basis values ``(C, 3, nq, 1)``."""
        cells = slice(None) if cells is None else cells
        mesh_cells = self.cells[cells]
        rinv = np.einsum("ca,caq->cq", self.rho_inv[mesh_cells], P_tab_values[..., 0])
        return self.cell_conc[cells][:, None, :] * self.molar_mass * rinv[..., None], rinv

    def centroid_mass_fraction_sum(self):
        rinv = self.rho_inv[self.cells].mean(axis=1)
        return (self.cell_conc * self.molar_mass).sum(axis=1) * rinv


def make_state(mesh, cell_conc, vertex_conc, model, kappa=None, iteration=0):
    """Build a :class:`MixtureState`, flooring concentrations at ``kappa``.

    ``kappa`` defaults to a tiny fraction of the mean concentration. The
    number of clipped values is stored in ``floored`` and reported with a
    warning.
    """
    cell_conc = np.array(cell_conc, dtype=float)
    vertex_conc = np.array(vertex_conc, dtype=float)
    if not (np.all(np.isfinite(cell_conc)) and np.all(np.isfinite(vertex_conc))):
        raise StateError("non-finite concentrations in coefficient state")
    if kappa is None:
        kappa = KAPPA_RELATIVE * float(np.mean(np.abs(cell_conc)))
    low = (cell_conc < kappa).sum() + (vertex_conc < kappa).sum()
    if low:
        warnings.warn(f"{low} concentration values clipped to the floor {kappa:.3e}")
        cell_conc = np.maximum(cell_conc, kappa)
        vertex_conc = np.maximum(vertex_conc, kappa)
    rho_inv = 1.0 / (vertex_conc @ model.molar_mass)
    return MixtureState(
        cell_conc, vertex_conc, rho_inv, model.molar_mass, mesh.cells, float(kappa), int(low), iteration
    )


def _as_concentration_field(source, points, n):
    if callable(source):
        c = np.asarray(source(points), dtype=float)
    else:
        c = np.broadcast_to(np.asarray(source, dtype=float), (len(points), n))
    if c.shape != (len(points), n):
        raise InvalidArgumentError(f"concentration source gave shape {c.shape}, expected {(len(points), n)}")
    return c


def interpolate_coefficients(source, model, disc, kappa=None, iteration=0):
    """Coefficient state from a solution or an initial concentration field.

    ``source`` is a solution exposing ``mu(i)`` and ``p`` coefficient vectors,
    a callable ``c(x) -> (N, n)``, or a constant per-species array. For a
    solution the constitutive law is sampled at cell centroids (cellwise
    constants) and at the vertices (reciprocal density).
    """
    mesh = disc.mesh
    n = model.n
    if hasattr(source, "mu") and hasattr(source, "p"):
        cells = np.arange(mesh.num_cells)
        centre = np.full((1, 3), 1.0 / 3.0)
        mu_c = np.stack([disc.X.evaluate_at(source.mu(i), cells, centre)[0][:, 0, 0] for i in range(n)], axis=1)
        p_c = disc.P.evaluate_at(source.p, cells, centre)[0][:, 0, 0]
        V = mesh.num_vertices
        mu_v = np.stack([np.asarray(source.mu(i))[:V] for i in range(n)], axis=1)
        p_v = np.asarray(source.p)
        cell_conc = concentrations_from_state(mu_c, p_c, model).c
        vertex_conc = concentrations_from_state(mu_v, p_v, model).c
    else:
        cell_conc = _as_concentration_field(source, mesh.centroids(), n)
        vertex_conc = _as_concentration_field(source, mesh.vertices, n)
    return make_state(mesh, cell_conc, vertex_conc, model, kappa, iteration)


# ---------------------------------------------------------------- matrix


def _coo(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def _local_to_global(dofs_r, dofs_c, local, off_r, off_c, shape):
    """Scatter per-cell blocks ``local (C, nr, nc)`` into a sparse matrix."""
    r = np.broadcast_to((off_r + dofs_r)[:, :, None], local.shape)
    c = np.broadcast_to((off_c + dofs_c)[:, None, :], local.shape)
    return _coo(r, c, local, shape)


def compliance_weights(model):
    """Coefficients ``(a, b)`` with ``A tau : s = a tau:s + b tr(tau) tr(s)`` in 2D."""
    return 0.5 / model.eta, 0.25 / model.zeta - 0.25 / model.eta


def _compliance_local(disc, model):
    tab = disc.tab(disc.S)
    a, b = compliance_weights(model)
    vals = tab.values  # (C, 24, nq, 3)
    wts = np.array([1.0, 2.0, 1.0])
    gram = np.einsum("cq,cbqk,cdqk,k->cbd", tab.dx, vals, vals, wts)
    tr = vals[..., 0] + vals[..., 2]
    trg = np.einsum("cq,cbq,cdq->cbd", tab.dx, tr, tr)
    return a * gram + b * trg


def _stress_div_local(disc):
    """``int div(s) . u`` with rows on the velocity basis, ``(C, 6, 24)``."""
    key = "stress_div"
    if key not in disc._cache:
        tw, ts = disc.tab(disc.W), disc.tab(disc.S)
        disc._cache[key] = np.einsum("cq,cbqk,cdqk->cbd", tw.dx, tw.values, ts.divs)
    return disc._cache[key]


def _pressure_grad_local(disc):
    """``int grad(q) . u``, ``(C, 6, 3)``."""
    key = "pressure_grad"
    if key not in disc._cache:
        tw, tp = disc.tab(disc.W), disc.tab(disc.P)
        disc._cache[key] = np.einsum("cq,cbqk,cdqk->cbd", tw.dx, tw.values, tp.grads)
    return disc._cache[key]


def _mean_rows(space, rule):
    """Vector ``int phi`` over the space's basis."""
    tab = space.tabulate(rule)
    local = np.einsum("cq,cbq->cb", tab.dx, tab.values[..., 0])
    return np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.dim)


def transport_weights(state, model, omega):
    """Weight matrix ``(C, nq, n+1, n+1)`` of the augmented transport form.

    Entry ``(I, J)`` multiplies ``v_I . u_J``; index ``n`` is the
    mass-average velocity. It equals the transport matrix on the species
    block plus ``gamma e e^T`` with ``e = (omega_1, .., omega_n, -sum omega)``.
    """
    n = model.n
    Mt = transport_matrix(state.cell_conc, model.diffusivity, model.RT)  # (C, n, n)
    Mt = 0.5 * (Mt + np.swapaxes(Mt, 1, 2))
    C, nq = omega.shape[:2]
    e = np.concatenate([omega, -omega.sum(axis=-1, keepdims=True)], axis=-1)
    Wt = model.gamma_aug * e[..., :, None] * e[..., None, :]
    Wt[..., :n, :n] += Mt[:, None]
    return Wt


def _check_state(state, model, disc):
    if state.cell_conc.shape != (disc.mesh.num_cells, model.n):
        raise StateError("coefficient state does not match the mesh and species count")
    if np.any(state.cell_conc < state.kappa) or np.any(state.vertex_conc < state.kappa):
        raise StateError(f"coefficient state violates the concentration floor {state.kappa:.3e}")


@dataclass
class BlockSystem:
    """Global sparse matrix ``K`` (CSR), right-hand side ``b`` and layout."""

    K: sp.csr_matrix
    b: np.ndarray | None
    layout: BlockLayout
    blocks: dict = field(default_factory=dict, repr=False)


def assemble_system(state, model, disc):
    """Assemble the symmetric global matrix for the coefficient ``state``.

    Diagonal blocks are symmetrized as ``(D + D^T) / 2`` and the off-diagonal
    coupling is stored once and mirrored, so ``K == K.T`` holds entrywise.
    The individual blocks are kept in ``BlockSystem.blocks`` under ``Lambda``,
    ``A`` and ``B``.
    """
    _check_state(state, model, disc)
    lay = disc.layout
    off = lay.offsets
    N = lay.size
    shape = (N, N)
    n = model.n
    mesh = disc.mesh
    C = mesh.num_cells

    # compliance block, independent of the state
    key = ("Lambda", model.eta, model.zeta)
    if key not in disc._cache:
        disc._cache[key] = _local_to_global(
            disc.S.cell_dofs, disc.S.cell_dofs, _compliance_local(disc, model), off["tau"], off["tau"], shape
        )
    Lam = disc._cache[key]

    tw, tp, tx = disc.tab(disc.W), disc.tab(disc.P), disc.tab(disc.X)
    omega, _ = state.omega_at(tp.values)

    # augmented transport block: weighted DG1 mass matrices
    Wt = transport_weights(state, model, omega)  # (C, nq, n+1, n+1)
    lam = disc.rule.points  # (nq, 3) barycentric = scalar DG1 basis
    G = np.einsum("cq,cqIJ,qa,qb->cIJab", tw.dx, Wt, lam, lam, optimize=True)
    wd = disc.W.cell_dofs.reshape(C, 2, 3)
    rows, cols, vals = [], [], []
    for I in range(n + 1):
        oI = lay.vel(I).start
        for J in range(n + 1):
            oJ = lay.vel(J).start
            for k in range(2):
                d = wd[:, k, :]
                rows.append(np.broadcast_to((oI + d)[:, :, None], (C, 3, 3)))
                cols.append(np.broadcast_to((oJ + d)[:, None, :], (C, 3, 3)))
                vals.append(G[:, I, J])
    A = _coo(np.concatenate([r.ravel() for r in rows]), np.concatenate([c.ravel() for c in cols]),
             np.concatenate([v.ravel() for v in vals]), shape)

    # coupling block B (rows on velocities, columns on potentials/stress/pressure)
    Bparts = []
    cvals = state.cell_conc  # (C, n)
    wgc = np.einsum("cq,cbqk,cdqk->cbd", tw.dx, tw.values, tx.grads)
    wgp = np.einsum("cq,cbqk,cdqk,cqi->icbd", tw.dx, tw.values, tp.grads, omega, optimize=True)  # (n, C, 6, 3)
    for i in range(n):
        vi = lay.vel(i).start
        Bparts.append(_local_to_global(disc.W.cell_dofs, disc.X.cell_dofs, -cvals[:, i, None, None] * wgc,
                                       vi, lay.mu(i).start, shape))
        Bparts.append(_local_to_global(disc.W.cell_dofs, disc.P.cell_dofs, wgp[i], vi, off["p"], shape))
    vo = lay.vel(n).start
    key = ("Bstokes",)
    if key not in disc._cache:
        disc._cache[key] = _local_to_global(disc.W.cell_dofs, disc.S.cell_dofs, _stress_div_local(disc), vo,
                                            off["tau"], shape) + _local_to_global(
            disc.W.cell_dofs, disc.P.cell_dofs, -_pressure_grad_local(disc), vo, off["p"], shape)
    B = Bparts[0]
    for part in Bparts[1:]:
        B = B + part
    B = B + disc._cache[key]

    # mean-value rows
    key = ("means",)
    if key not in disc._cache:
        mX = _mean_rows(disc.X, disc.rule)
        mP = _mean_rows(disc.P, disc.rule)
        r, c, v = [], [], []
        lo = off["lambda"]
        for i in range(n):
            r.append(np.full(lay.dim_mu, lo + i))
            c.append(lay.mu(i).start + np.arange(lay.dim_mu))
            v.append(mX)
        r.append(np.full(lay.dim_p, lo + n))
        c.append(off["p"] + np.arange(lay.dim_p))
        v.append(mP)
        disc._cache[key] = _coo(np.concatenate(r), np.concatenate(c), np.concatenate(v), shape)
    Cm = disc._cache[key]

    D = Lam - A
    D = (D + D.T) * 0.5
    L = B + Cm
    K = (D + (L + L.T)).tocsr()
    K.sort_indices()
    return BlockSystem(K=K, b=None, layout=lay, blocks={"Lambda": Lam, "A": (A + A.T) * 0.5, "B": B, "C": Cm})


# ---------------------------------------------------------------- right-hand side


@dataclass(frozen=True)
class BoundaryData:
    """Natural boundary data per boundary tag.

    ``mass_flux[tag](x, n)`` returns the mass flux vector ``rho v`` at points
    ``x (N, 2)`` with outward normals ``n (N, 2)`` as ``(N, 2)``;
    ``molar_flux[tag](x, n)`` returns the outward normal molar fluxes
    ``c_i v_i . n`` as ``(N, n_species)``.
    """

    mass_flux: Mapping[str, Callable]
    molar_flux: Mapping[str, Callable]

    @classmethod
    def zero(cls, tags, n):
        z2 = lambda x, nn: np.zeros((len(x), 2))  # noqa: E731
        zn = lambda x, nn: np.zeros((len(x), n))  # noqa: E731
        return cls({t: z2 for t in tags}, {t: zn for t in tags})


def boundary_points(mesh, npoints=EDGE_POINTS):
    """Edge quadrature on every boundary facet.

    Returns ``cells (B,)``, barycentric points ``(B, np, 3)``, physical points
    ``(B, np, 2)``, weights including the edge length ``(B, np)`` and outward
    normals ``(B, 2)``.
    """
    cells, local, normals = mesh.boundary_facet_data()
    s, w = edge_quadrature(npoints)
    t = 0.5 * (1.0 + s)
    B = len(cells)
    bary = np.zeros((B, npoints, 3))
    a = (local + 1) % 3
    b = (local + 2) % 3
    bary[np.arange(B)[:, None], np.arange(npoints)[None], a[:, None]] = 1.0 - t
    bary[np.arange(B)[:, None], np.arange(npoints)[None], b[:, None]] = t
    verts = mesh.vertices[mesh.cells[cells]]
    x = np.einsum("bqa,bai->bqi", bary, verts)
    length = mesh.edge_lengths()[mesh.boundary_edges]
    weights = 0.5 * length[:, None] * w[None, :]
    return cells, bary, x, weights, normals


def evaluate_boundary_data(data, mesh, x, normals, n):
    """Boundary data at points ``x (B, np, 2)``; returns ``g_v (B, np, 2)``, ``g_i (B, np, n)``."""
    B, npt = x.shape[:2]
    gv = np.zeros((B, npt, 2))
    gi = np.zeros((B, npt, n))
    for tag in mesh.tags:
        sel = mesh.boundary_tags == tag
        for name, table in (("mass flux", data.mass_flux), ("molar flux", data.molar_flux)):
            if tag not in table:
                raise BoundaryDataError(f"no {name} data for boundary tag {tag!r}")
        xs = x[sel].reshape(-1, 2)
        ns = np.repeat(normals[sel], npt, axis=0)
        gv[sel] = np.asarray(data.mass_flux[tag](xs, ns), dtype=float).reshape(-1, npt, 2)
        gi[sel] = np.asarray(data.molar_flux[tag](xs, ns), dtype=float).reshape(-1, npt, n)
    return gv, gi


def compatibility_defect(gv, gi, normals, molar_mass):
    """Pointwise ``|sum_i M_i g_i - g_v . n|`` at boundary points."""
    return np.abs(gi @ molar_mass - np.einsum("bqi,bi->bq", gv, normals))


def assemble_rhs(state, model, disc, data, body_force=None, reaction=None):
    """Right-hand side for boundary ``data``, body force and reaction rates.

    ``body_force(x) -> (N, 2)`` and ``reaction(x) -> (N, n)`` are optional.
    A compatibility defect between the mass and molar fluxes beyond a small
    relative tolerance triggers a warning reporting its size.
    """
    lay = disc.layout
    off = lay.offsets
    n = model.n
    mesh = disc.mesh
    b = np.zeros(lay.size)

    cells, bary, x, wts, normals = boundary_points(mesh)
    gv, gi = evaluate_boundary_data(data, mesh, x, normals, n)
    defect = compatibility_defect(gv, gi, normals, model.molar_mass)
    scale = max(float(np.abs(gv).max(initial=0.0)), float(np.abs(gi @ model.molar_mass).max(initial=0.0)))
    if scale > 0 and defect.max() > COMPAT_TOL * scale:
        warnings.warn(f"boundary data violate mass/molar flux compatibility: max defect {defect.max():.3e}")

    pv, _, _ = disc.P.basis_at(bary, cells=cells)  # (B, 3, np, 1)
    rho_inv_b = np.einsum("ba,baq->bq", state.rho_inv[mesh.cells[cells]], pv[..., 0])
    rho_b = 1.0 / rho_inv_b
    gv_rho = gv * rho_inv_b[..., None]

    # stress rows: <s n, g_v / rho>
    sv, _, _ = disc.S.basis_at(bary, x=x, cells=cells)  # (B, 24, np, 3)
    nx, ny = normals[:, None, None, 0], normals[:, None, None, 1]
    sn = np.stack([sv[..., 0] * nx + sv[..., 1] * ny, sv[..., 1] * nx + sv[..., 2] * ny], axis=-1)
    loc = np.einsum("bq,bdqk,bqk->bd", wts, sn, gv_rho)
    b[off["tau"]:off["tau"] + lay.dim_tau] += np.bincount(
        disc.S.cell_dofs[cells].ravel(), weights=loc.ravel(), minlength=lay.dim_tau)

    # pressure rows: -<q n, g_v / rho> + sum_i <g_i, M_i q / rho>
    flux = -np.einsum("bqk,bk->bq", gv_rho, normals) + (gi @ model.molar_mass) * rho_inv_b
    loc = np.einsum("bq,bdq,bq->bd", wts, pv[..., 0], flux)
    b[off["p"]:off["p"] + lay.dim_p] += np.bincount(
        disc.P.cell_dofs[cells].ravel(), weights=loc.ravel(), minlength=lay.dim_p)

    # potential rows: -<g_i, w> + int r_i w
    xv, _, _ = disc.X.basis_at(bary, x=x, cells=cells)
    tx = disc.tab(disc.X)
    rvals = None
    if reaction is not None:
        rvals = np.asarray(reaction(tx.x.reshape(-1, 2)), dtype=float).reshape(tx.x.shape[:2] + (n,))
    for i in range(n):
        loc = -np.einsum("bq,bdq,bq->bd", wts, xv[..., 0], gi[..., i])
        seg = np.bincount(disc.X.cell_dofs[cells].ravel(), weights=loc.ravel(), minlength=lay.dim_mu)
        if rvals is not None:
            locr = np.einsum("cq,cdq,cq->cd", tx.dx, tx.values[..., 0], rvals[..., i])
            seg += np.bincount(disc.X.cell_dofs.ravel(), weights=locr.ravel(), minlength=lay.dim_mu)
        b[lay.mu(i)] += seg

    # mass-average velocity rows: -int rho f . u
    if body_force is not None:
        tw, tp = disc.tab(disc.W), disc.tab(disc.P)
        f = np.asarray(body_force(tw.x.reshape(-1, 2)), dtype=float).reshape(tw.x.shape)
        _, rinv = state.omega_at(tp.values)
        loc = -np.einsum("cq,cbqk,cqk,cq->cb", tw.dx, tw.values, f, 1.0 / rinv)
        b[lay.vel(n)] += np.bincount(disc.W.cell_dofs.ravel(), weights=loc.ravel(), minlength=lay.dim_vel)
    return b


# ---------------------------------------------------------------- driving force


def discrete_driving_force(w, q, state, i, disc):
    """DG1-vector coefficients of ``-c_i grad(w) + omega_i grad(q)``.

    With cellwise-constant ``c_i``, nodal reciprocal density and potentials
    of degree at most two, the field is linear on each cell, so its values at
    the cell vertices are its exact coefficients.
    """
    mesh = disc.mesh
    C = mesh.num_cells
    cells = np.arange(C)
    corners = np.eye(3)
    _, gw = disc.X.evaluate_at(w, cells, corners)  # (C, 3, 2)
    _, gq = disc.P.evaluate_at(q, cells, corners)
    omega = state.cell_conc[:, i, None] * state.molar_mass[i] * state.rho_inv[mesh.cells]  # (C, 3)
    d = -state.cell_conc[:, i, None, None] * gw + omega[..., None] * gq  # (C, 3 vertices, 2)
    out = np.empty((C, 2, 3))
    out[:, 0] = d[..., 0]
    out[:, 1] = d[..., 1]
    return out.reshape(-1)
