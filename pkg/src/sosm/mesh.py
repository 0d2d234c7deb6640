"""Triangular meshes with edge orientation and tagged boundary facets.

A :class:`Mesh` is immutable once built. Edges are stored as vertex pairs
sorted ascending, which fixes a global orientation used by the edge-moment
degrees of freedom of the stress element.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidArgumentError,
    InvalidGeometryError,
    MeshParseError,
    MeshValidationError,
)

DEFAULT_TAG = "wall"


def _freeze(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """2D simplicial mesh.

    Attributes
    ----------
    vertices : (V, 2) float array
    cells : (C, 3) int array, counterclockwise
    edges : (E, 2) int array, ``edges[e, 0] < edges[e, 1]``
    cell_edges : (C, 3) int array; local edge ``j`` is opposite local vertex ``j``
    cell_edge_signs : (C, 3) array of +-1; +1 when the counterclockwise
        traversal of the local edge agrees with the global orientation
    edge_cells : (E, 2) int array; second entry is -1 on the boundary
    boundary_edges : (B,) int array of edge indices
    boundary_tags : (B,) array of tag strings
    """

    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    cell_edges: np.ndarray
    cell_edge_signs: np.ndarray
    edge_cells: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_cells(self):
        return len(self.cells)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def tags(self):
        return sorted(set(self.boundary_tags.tolist()))

    def edges_with_tag(self, tag):
        return self.boundary_edges[self.boundary_tags == tag]

    def cell_areas(self):
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def cell_diameters(self):
        p = self.vertices[self.cells]
        lens = np.stack(
            [np.linalg.norm(p[:, (j + 2) % 3] - p[:, (j + 1) % 3], axis=1) for j in range(3)],
            axis=1,
        )
        return lens.max(axis=1)

    @property
    def h(self):
        return float(self.cell_diameters().max())

    def centroids(self):
        return self.vertices[self.cells].mean(axis=1)

    def edge_lengths(self):
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.linalg.norm(d, axis=1)

    def edge_normals(self):
        """Unit normals fixed by the global edge orientation (tangent rotated clockwise)."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        t = d / np.linalg.norm(d, axis=1)[:, None]
        return np.stack([t[:, 1], -t[:, 0]], axis=1)

    def boundary_facet_data(self):
        """Per boundary edge: owning cell, local edge index, outward unit normal.

        Returns ``(cells, local, normals)``.
        """
        if "bfacets" not in self._cache:
            e = self.boundary_edges
            cells = self.edge_cells[e, 0]
            local = np.argmax(self.cell_edges[cells] == e[:, None], axis=1)
            a = self.cells[cells, (local + 1) % 3]
            b = self.cells[cells, (local + 2) % 3]
            d = self.vertices[b] - self.vertices[a]
            t = d / np.linalg.norm(d, axis=1)[:, None]
            normals = np.stack([t[:, 1], -t[:, 0]], axis=1)
            self._cache["bfacets"] = (cells, local, normals)
        return self._cache["bfacets"]

    def check_invariants(self):
        """Raise :class:`MeshValidationError` if a structural invariant fails."""
        if np.any(self.cell_areas() <= 0):
            raise MeshValidationError("cell with non-positive signed area")
        V, E, C = self.num_vertices, self.num_edges, self.num_cells
        # F counts the outer face; holds for simply connected domains
        if V - E + C + 1 != 2:
            raise MeshValidationError(f"Euler relation fails: V-E+F = {V - E + C + 1}")
        counts = np.bincount(self.cell_edges.ravel(), minlength=E)
        if np.any(counts < 1) or np.any(counts > 2):
            raise MeshValidationError("edge shared by more than two cells")
        bnd = np.flatnonzero(counts == 1)
        if not np.array_equal(np.sort(self.boundary_edges), bnd):
            raise MeshValidationError("boundary tags do not partition the boundary edges")
        return True


def build_mesh(vertices, cells, tagger=None, facet_tags=None, default_tag=DEFAULT_TAG):
    """Build connectivity for a triangle soup and tag its boundary.

    ``tagger`` is a callable mapping boundary edge midpoints ``(B, 2)`` to tag
    strings; ``facet_tags`` maps sorted vertex pairs to tags. Boundary edges
    not covered by either get ``default_tag``.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.asarray(cells, dtype=np.int64).copy()
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshValidationError("vertices must have shape (V, 2)")
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise MeshValidationError("cells must have shape (C, 3)")
    if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
        raise MeshValidationError("cell references a vertex index out of range")

    p = vertices[cells]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    if np.any(area == 0):
        raise MeshValidationError("degenerate cell with zero area")
    flip = area < 0
    if flip.any():
        warnings.warn(f"reoriented {int(flip.sum())} clockwise cell(s)", stacklevel=2)
        cells[flip] = cells[flip][:, [0, 2, 1]]

    local = np.stack(
        [cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]], axis=1
    )  # (C, 3, 2) counterclockwise traversal of edge j
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    cell_edges = inverse.reshape(-1, 3)
    signs = np.where(local[:, :, 0] < local[:, :, 1], 1, -1).astype(np.int8)

    E = len(edges)
    counts = np.bincount(inverse, minlength=E)
    if np.any(counts > 2):
        raise MeshValidationError("non-manifold edge shared by more than two cells")
    edge_cells = -np.ones((E, 2), dtype=np.int64)
    cell_ids = np.repeat(np.arange(len(cells)), 3)
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    first = order[starts]
    edge_cells[:, 0] = cell_ids[first]
    two = counts == 2
    edge_cells[two, 1] = cell_ids[order[starts[two] + 1]]

    boundary = np.flatnonzero(counts == 1)
    tags = np.full(len(boundary), default_tag, dtype=object)
    if tagger is not None and len(boundary):
        mids = vertices[edges[boundary]].mean(axis=1)
        tags[:] = np.asarray(tagger(mids), dtype=object)
    if facet_tags:
        lookup = {tuple(e): k for k, e in enumerate(edges[boundary].tolist())}
        for (i, j), tag in facet_tags.items():
            key = (min(i, j), max(i, j))
            if key not in lookup:
                raise MeshValidationError(f"tagged facet {key} is not a boundary edge")
            tags[lookup[key]] = tag

    return Mesh(
        vertices=_freeze(vertices),
        cells=_freeze(cells),
        edges=_freeze(edges.astype(np.int64)),
        cell_edges=_freeze(cell_edges.astype(np.int64)),
        cell_edge_signs=_freeze(signs),
        edge_cells=_freeze(edge_cells),
        boundary_edges=_freeze(boundary.astype(np.int64)),
        boundary_tags=_freeze(tags),
    )


def retag(mesh, tagger):
    """Return a copy of ``mesh`` with boundary tags recomputed from midpoints."""
    return build_mesh(mesh.vertices, mesh.cells, tagger=tagger)


def _grid(x0, x1, y0, y1, nx, ny, diagonal="right"):
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    a = j * (nx + 1) + i
    b = a + 1
    c = b + nx + 1
    d = a + nx + 1
    if diagonal == "right":
        cells = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    elif diagonal == "left":
        cells = np.concatenate([np.stack([a, b, d], 1), np.stack([b, c, d], 1)])
    else:
        raise InvalidArgumentError(f"diagonal must be 'left' or 'right', got {diagonal!r}")
    return verts, cells


def unit_square_mesh(n, diagonal="right"):
    """Uniform mesh of (0, 1)^2 with ``n`` squares per side, each split in two.

    The whole boundary is tagged ``wall``.
    """
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n!r}")
    verts, cells = _grid(0.0, 1.0, 0.0, 1.0, int(n), int(n), diagonal)
    return build_mesh(verts, cells)


@dataclass(frozen=True)
class JunctionGeometry:
    """T-shaped mixing channel: two vertical inlet arms feed a horizontal outlet.

    The junction block is ``[0, width] x [-width/2, width/2]``. The top arm
    (inlet 1) and bottom arm (inlet 2) extend it vertically by ``arm_length``;
    the outlet channel extends it to the right by ``outlet_length``. With
    ``arm_length == 0`` the domain degenerates to a straight channel whose left
    end is the single inlet. ``h`` is the target cell size.
    """

    width: float = 1.0
    arm_length: float = 1.0
    outlet_length: float = 3.0
    h: float = 0.1
    diagonal: str = "right"


def _blocks_to_mesh(blocks, diagonal):
    verts, cells = [], []
    offset = 0
    for blk in blocks:
        v, c = _grid(*blk, diagonal=diagonal)
        verts.append(v)
        cells.append(c + offset)
        offset += len(v)
    verts = np.concatenate(verts)
    cells = np.concatenate(cells)
    scale = max(np.ptp(verts[:, 0]), np.ptp(verts[:, 1]))
    keys = np.round(verts / (scale * 1e-9)).astype(np.int64)
    uniq, index, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    return verts[index], inverse.reshape(-1)[cells]


def junction_mesh(params=JunctionGeometry()):
    """Structured-block triangulation of the T junction described by ``params``.

    Boundary tags: ``inlet1`` (top), ``inlet2`` (bottom), ``outlet`` (right end)
    and ``wall`` elsewhere.
    """
    W, La, Lo, h = params.width, params.arm_length, params.outlet_length, params.h
    for name, val in (("width", W), ("h", h)):
        if not (val > 0 and math.isfinite(val)):
            raise InvalidGeometryError(f"{name} must be positive, got {val!r}")
    if not (La >= 0 and Lo > 0):
        raise InvalidGeometryError("arm_length must be >= 0 and outlet_length > 0")
    if h > W:
        raise InvalidGeometryError(f"target size h={h} exceeds the channel width {W}")

    nw = max(1, int(math.ceil(W / h)))
    no = max(1, int(math.ceil(Lo / h)))
    y0, y1 = -W / 2, W / 2
    tol = 1e-9 * max(W, Lo, La)

    if La == 0:
        blocks = [(0.0, W + Lo, y0, y1, nw + no, nw)]

        def tagger(m):
            t = np.full(len(m), "wall", dtype=object)
            t[np.abs(m[:, 0]) < tol] = "inlet1"
            t[np.abs(m[:, 0] - (W + Lo)) < tol] = "outlet"
            return t
    else:
        na = max(1, int(math.ceil(La / h)))
        blocks = [
            (0.0, W, y0, y1, nw, nw),
            (0.0, W, y1, y1 + La, nw, na),
            (0.0, W, y0 - La, y0, nw, na),
            (W, W + Lo, y0, y1, no, nw),
        ]

        def tagger(m):
            t = np.full(len(m), "wall", dtype=object)
            t[np.abs(m[:, 1] - (y1 + La)) < tol] = "inlet1"
            t[np.abs(m[:, 1] - (y0 - La)) < tol] = "inlet2"
            t[np.abs(m[:, 0] - (W + Lo)) < tol] = "outlet"
            return t

    verts, cells = _blocks_to_mesh(blocks, params.diagonal)
    mesh = build_mesh(verts, cells, tagger=tagger)
    mesh.check_invariants()
    return mesh


MESH_HEADER = "sosm-mesh 1"


def save_mesh(mesh, path):
    """Write ``mesh`` in the ASCII ``sosm-mesh 1`` format.

    Coordinates are written with ``repr`` so that loading is bit-exact.
    """
    lines = [MESH_HEADER, f"vertices {mesh.num_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"cells {mesh.num_cells}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.cells.tolist()]
    lines.append(f"facets {len(mesh.boundary_edges)}")
    for e, tag in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags.tolist()):
        i, j = mesh.edges[e]
        lines.append(f"{i} {j} {tag}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path):
    """Read a mesh written by :func:`save_mesh`.

    Raises :class:`MeshParseError` (with line number) on malformed input and
    :class:`MeshValidationError` on inconsistent connectivity. Clockwise cells
    are reoriented with a warning. Boundary edges absent from the facet
    section are an error.
    """
    with open(path) as fh:
        raw = fh.read().splitlines()
    lines = [(k + 1, ln.strip()) for k, ln in enumerate(raw)]
    lines = [(k, ln) for k, ln in lines if ln and not ln.startswith("#")]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise MeshParseError("unexpected end of file", len(raw) + 1)
        item = lines[pos]
        pos += 1
        return item

    lineno, line = take()
    if line != MESH_HEADER:
        raise MeshParseError(f"expected header {MESH_HEADER!r}, got {line!r}", lineno)

    def section(name, width, conv):
        lineno, line = take()
        parts = line.split()
        if len(parts) != 2 or parts[0] != name or not parts[1].isdigit():
            raise MeshParseError(f"expected '{name} <count>', got {line!r}", lineno)
        rows = []
        for _ in range(int(parts[1])):
            lineno, line = take()
            parts = line.split()
            if len(parts) != width:
                raise MeshParseError(f"expected {width} fields, got {len(parts)}", lineno)
            try:
                rows.append(conv(parts, lineno))
            except ValueError as exc:
                raise MeshParseError(str(exc), lineno) from None
        return rows

    verts = section("vertices", 2, lambda p, _: [float(p[0]), float(p[1])])
    cells = section("cells", 3, lambda p, _: [int(p[0]), int(p[1]), int(p[2])])
    facets = section("facets", 3, lambda p, _: (int(p[0]), int(p[1]), p[2]))
    if pos != len(lines):
        raise MeshParseError("trailing content after facets section", lines[pos][0])

    verts = np.array(verts, dtype=float).reshape(-1, 2)
    cells = np.array(cells, dtype=np.int64).reshape(-1, 3)
    if cells.size and (cells.min() < 0 or cells.max() >= len(verts)):
        raise MeshValidationError("cell references a vertex index out of range")
    facet_tags = {(i, j): tag for i, j, tag in facets}
    mesh = build_mesh(verts, cells, facet_tags=facet_tags, default_tag=None)
    missing = [e for e, t in zip(mesh.boundary_edges.tolist(), mesh.boundary_tags.tolist()) if t is None]
    if missing:
        raise MeshValidationError(f"{len(missing)} boundary edge(s) carry no tag")
    return mesh
