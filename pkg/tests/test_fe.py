import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sosm.errors import ConditioningError, InvalidArgumentError
from sosm.fe import FunctionSpace, aw_local_basis, build_dofmap, interpolate, tabulate
from sosm.mesh import build_mesh, unit_square_mesh
from sosm.quadrature import edge_quadrature, quadrature

# local edge j joins vertices j+1 and j+2; default orientation runs low to high local index
DEFAULT_EDGE_ENDS = [(1, 2), (0, 2), (0, 1)]


def aspect_ratio(v):
    lens = [np.linalg.norm(v[(j + 2) % 3] - v[(j + 1) % 3]) for j in range(3)]
    d1, d2 = v[1] - v[0], v[2] - v[0]
    area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
    return max(lens) ** 2 / (2 * area)  # longest edge over shortest altitude


def random_triangles(rng, count, max_aspect=20.0):
    out = []
    while len(out) < count:
        v = rng.uniform(-1, 1, (3, 2)) * rng.uniform(0.01, 10)
        d1, d2 = v[1] - v[0], v[2] - v[0]
        if d1[0] * d2[1] - d1[1] * d2[0] < 0:
            v = v[[0, 2, 1]]
        if aspect_ratio(v) <= max_aspect:
            out.append(v)
    return np.array(out)


def aw_functionals(basis, verts, ends=DEFAULT_EDGE_ENDS):
    """The 24 degree-of-freedom functionals applied to each basis member, ``(C, 24, 24)``.

    Evaluated from physical-point values only: vertex values, edge traction
    moments by Gauss-Legendre on each oriented edge, cell means by quadrature.
    """
    C = len(verts)
    out = np.zeros((C, 24, 24))
    val, _ = basis.evaluate(verts)  # (C, 24, 3, 3)
    for a in range(3):
        out[:, 3 * a : 3 * a + 3, :] = val[:, :, a, :].transpose(0, 2, 1)
    s, w = edge_quadrature(5)
    for j, (i0, i1) in enumerate(ends):
        p0, p1 = verts[:, i0], verts[:, i1]
        t = (p1 - p0) / np.linalg.norm(p1 - p0, axis=1)[:, None]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        x = 0.5 * (p0 + p1)[:, None] + 0.5 * s[None, :, None] * (p1 - p0)[:, None]
        v, _ = basis.evaluate(x)
        tn = np.stack([v[..., 0] * n[:, None, None, 0] + v[..., 1] * n[:, None, None, 1],
                       v[..., 1] * n[:, None, None, 0] + v[..., 2] * n[:, None, None, 1]], axis=-1)
        for k in range(2):
            for m, leg in enumerate((np.ones_like(s), s)):
                out[:, 9 + 4 * j + 2 * k + m, :] = 0.5 * np.einsum("cbq,q->cb", tn[..., k], w * leg)
    rule = quadrature(8)
    x = np.einsum("qa,cai->cqi", rule.points, verts)
    v, _ = basis.evaluate(x)
    out[:, 21:24, :] = 2.0 * np.einsum("q,cbqk->ckb", rule.weights, v)
    return out


def test_aw_kronecker_on_reference_cell():
    verts = np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]])
    basis = aw_local_basis(verts)
    assert np.abs(aw_functionals(basis, verts) - np.eye(24)).max() <= 1e-10


def test_aw_divergence_is_linear(rng):
    verts = random_triangles(rng, 5)
    basis = aw_local_basis(verts)
    bary = rng.dirichlet(np.ones(3), size=12)
    x = np.einsum("qa,cai->cqi", bary, verts)
    _, div = basis.evaluate(x)  # (C, 24, 12, 2)
    for c in range(len(verts)):
        A = np.column_stack([np.ones(12), x[c]])
        for b in range(24):
            coef, *_ = np.linalg.lstsq(A, div[c, b], rcond=None)
            scale = max(1.0, np.abs(div[c, b]).max())
            assert np.abs(A @ coef - div[c, b]).max() <= 1e-9 * scale


def test_aw_local_div_surjective():
    mesh = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    S, W = FunctionSpace(mesh, "AW"), FunctionSpace(mesh, "DG1vec")
    rule = quadrature(8)
    ts, tw = S.tabulate(rule), W.tabulate(rule)
    D = np.einsum("cq,cbqk,cdqk->cbd", ts.dx, ts.divs, tw.values)[0]
    assert D.shape == (24, 6)
    assert np.linalg.matrix_rank(D) == 6


def test_aw_degenerate_cell_reports_condition():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1e-9]])
    with pytest.raises(ConditioningError) as exc:
        aw_local_basis(verts)
    assert exc.value.condition > 1e12


def test_aw_normal_traction_continuous(rng):
    mesh = build_mesh([[0, 0], [1, 0.2], [0.3, 1.1], [1.4, 1.3]], [[0, 1, 2], [1, 3, 2]])
    S = FunctionSpace(mesh, "AW")
    coeffs = rng.standard_normal(S.dim)
    e = np.flatnonzero(mesh.edge_cells[:, 1] >= 0)[0]
    a, b = mesh.edges[e]
    n = mesh.edge_normals()[e]
    t = np.linspace(0.05, 0.95, 7)
    tractions = []
    for c in mesh.edge_cells[e]:
        bary = np.zeros((len(t), 3))
        la = mesh.cells[c].tolist().index(a)
        lb = mesh.cells[c].tolist().index(b)
        bary[:, la], bary[:, lb] = 1 - t, t
        val, _ = S.evaluate_at(coeffs, [c], bary[None])
        sig = val[0]
        tractions.append(np.stack([sig[:, 0] * n[0] + sig[:, 1] * n[1], sig[:, 1] * n[0] + sig[:, 2] * n[1]], 1))
    assert np.abs(tractions[0] - tractions[1]).max() <= 1e-10 * np.abs(tractions[0]).max()


@pytest.mark.parametrize("space,expected", [("CG1", 25), ("DG1vec", 192), ("CG2", 25 + 56)])
def test_dofmap_dimensions(space, expected):
    assert build_dofmap(space, unit_square_mesh(4)).dim == expected


def test_aw_dimension_on_32_mesh():
    m = unit_square_mesh(32)
    assert build_dofmap("AW", m).dim == 3 * 1089 + 4 * 3136 + 3 * 2048 == 21955


def test_unknown_space():
    with pytest.raises(InvalidArgumentError):
        build_dofmap("RT0", unit_square_mesh(1))
    with pytest.raises(InvalidArgumentError):
        FunctionSpace(unit_square_mesh(1), "P7")


def test_shared_edge_dofs_agree():
    m = unit_square_mesh(3)
    dm = build_dofmap("AW", m)
    for e in np.flatnonzero(m.edge_cells[:, 1] >= 0):
        got = []
        for c in m.edge_cells[e]:
            j = m.cell_edges[c].tolist().index(e)
            got.append(dm.cell_dofs[c, 9 + 4 * j : 13 + 4 * j].tolist())
        assert got[0] == got[1]


def test_cg1_identity_at_vertices():
    mesh = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    vals, _, _ = FunctionSpace(mesh, "CG1").basis_at(np.eye(3))
    assert np.array_equal(vals[0, :, :, 0], np.eye(3))


@given(bary=st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3))
def test_cg2_partition_of_unity(bary):
    b = np.array(bary) / sum(bary)
    mesh = unit_square_mesh(2)
    vals, grads, _ = FunctionSpace(mesh, "CG2").basis_at(b[None])
    assert np.allclose(vals[..., 0].sum(axis=1), 1.0, atol=1e-14)
    assert np.allclose(grads.sum(axis=1), 0.0, atol=1e-12)


def test_tabulate_shapes():
    m = unit_square_mesh(2)
    rule = quadrature(4)
    nq = len(rule.weights)
    assert tabulate("DG1vec", m, rule).values.shape == (8, 6, nq, 2)
    t = tabulate("AW", m, rule)
    assert t.values.shape == (8, 24, nq, 3) and t.divs.shape == (8, 24, nq, 2)
    assert tabulate("CG2", m, rule).grads.shape == (8, 6, nq, 2)


def _quadratic_tensor(x):
    X, Y = x[..., 0], x[..., 1]
    return np.stack([1 + X * Y + Y**2, X - 2 * Y**2 + 0.5 * X * Y, X**2 - Y], axis=-1)


def test_interpolation_reproduces_polynomials():
    m = unit_square_mesh(3, "left")
    rule = quadrature(8)
    S = FunctionSpace(m, "AW")
    val, _ = S.evaluate(interpolate(S, _quadratic_tensor), rule)
    assert np.abs(val - _quadratic_tensor(S.tabulate(rule).x)).max() <= 1e-11
    X = FunctionSpace(m, "CG2")
    quad = lambda p: 1 + p[:, 0] * p[:, 1] - 3 * p[:, 1] ** 2  # noqa: E731
    val, _ = X.evaluate(interpolate(X, quad), rule)
    assert np.abs(val[..., 0] - quad(X.tabulate(rule).x.reshape(-1, 2)).reshape(val.shape[:2])).max() <= 1e-13
    W = FunctionSpace(m, "DG1vec")
    lin = lambda p: np.stack([p[:, 0] - 2 * p[:, 1], 3 + p[:, 1]], axis=1)  # noqa: E731
    val, _ = W.evaluate(interpolate(W, lin), rule)
    assert np.abs(val - lin(W.tabulate(rule).x.reshape(-1, 2)).reshape(val.shape)).max() <= 1e-12
