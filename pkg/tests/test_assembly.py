import warnings

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import coefficient_state
from sosm.assembly import (
    BlockLayout,
    BoundaryData,
    Discretization,
    assemble_rhs,
    assemble_system,
    compliance_weights,
    discrete_driving_force,
    interpolate_coefficients,
    make_state,
)
from sosm.errors import BoundaryDataError, InvalidArgumentError, StateError
from sosm.fe import FunctionSpace, interpolate
from sosm.mesh import build_mesh, unit_square_mesh
from sosm.quadrature import quadrature
from sosm.solver import SolutionState
from sosm.thermo import IdealGas, MaterialModel, concentrations_from_state


def binary_model(D=1.0, gamma=0.1, M=(1.0, 2.0), eta=0.3, zeta=0.7):
    return MaterialModel(M, np.full((2, 2), D), 1.0, eta, zeta, gamma, IdealGas(1.0, (0.0, 0.0)))


def uniform_system(n=2, family=1, **kw):
    model = binary_model(**kw)
    disc = Discretization(unit_square_mesh(n), 2, family)
    state = interpolate_coefficients(np.array([0.4, 0.6]), model, disc)
    return model, disc, state, assemble_system(state, model, disc)


def test_layout_is_contiguous():
    lay = BlockLayout(3, 10, 20, 5, 12)
    pos = 0
    for name, size in lay.blocks:
        assert lay.offsets[name] == pos
        pos += size
    assert lay.size == pos == 3 * 10 + 20 + 5 + 4 * 12 + 4
    assert lay.vel(3) == lay.slice("v")
    assert lay.theta_size == 3 * 10 + 20 + 5


def test_unknown_family():
    with pytest.raises(InvalidArgumentError):
        Discretization(unit_square_mesh(1), 2, family=3)


def test_uniform_source_gives_uniform_state():
    model = binary_model()
    disc = Discretization(unit_square_mesh(3), 2)
    s = interpolate_coefficients(np.array([0.4, 0.6]), model, disc)
    assert np.all(s.cell_conc == [0.4, 0.6])
    assert np.allclose(s.rho_inv, 1 / (0.4 + 1.2))
    assert np.allclose(s.centroid_mass_fraction_sum(), 1.0, rtol=1e-15)


def test_state_from_solution_samples_centroids(case):
    disc = Discretization(unit_square_mesh(8), case.n)
    sol = SolutionState.zeros(disc)
    for i in range(case.n):
        sol.coeffs[disc.layout.mu(i)] = interpolate(disc.X, lambda x, i=i: case.exact["mu"](x)[:, i])
    sol.coeffs[disc.layout.slice("p")] = interpolate(disc.P, case.exact["p"])
    state = interpolate_coefficients(sol, case.model, disc)
    C = disc.mesh.num_cells
    mu_c = np.stack([disc.X.evaluate_at(sol.mu(i), np.arange(C), np.full((1, 3), 1 / 3))[0][:, 0, 0]
                     for i in range(case.n)], axis=1)
    want = concentrations_from_state(mu_c, 0.0, case.model).c
    assert np.array_equal(state.cell_conc, want)
    assert np.abs(state.cell_conc - case.exact["c"](disc.mesh.centroids())).max() < 1e-3


def test_mass_fraction_sum_converges_first_order(case):
    errs = []
    for n in (4, 8, 16):
        _, state = coefficient_state(case, n)
        errs.append(np.abs(state.centroid_mass_fraction_sum() - 1).max())
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] > 1.8


def test_floor_engagement_is_counted():
    model = binary_model()
    mesh = unit_square_mesh(2)
    with pytest.warns(UserWarning, match="clipped"):
        s = make_state(mesh, np.full((8, 2), [1e-20, 1.0]), np.full((9, 2), [1.0, 1.0]), model, kappa=1e-6)
    assert s.floored == 8
    assert np.all(s.cell_conc >= 1e-6)


def test_assembly_refuses_state_below_floor():
    model, disc, state, _ = uniform_system()
    state.cell_conc[0, 0] = 0.0
    with pytest.raises(StateError):
        assemble_system(state, model, disc)


def test_nonfinite_state_rejected():
    with pytest.raises(StateError):
        make_state(unit_square_mesh(1), np.full((2, 2), np.nan), np.ones((4, 2)), binary_model())


@pytest.mark.parametrize("family", [1, 2])
def test_matrix_exactly_symmetric(case, family):
    disc, state = coefficient_state(case, 3, family)
    K = assemble_system(state, case.model, disc).K
    assert (K != K.T).nnz == 0


def test_blocks_positive_semidefinite(case, rng):
    disc, state = coefficient_state(case, 4)
    blocks = assemble_system(state, case.model, disc).blocks
    for name in ("Lambda", "A"):
        B = blocks[name].tocsr()
        norm = sp.linalg.norm(B)
        for _ in range(50):
            y = rng.standard_normal(B.shape[0])
            assert y @ (B @ y) >= -1e-12 * norm * (y @ y)


def test_transport_block_annihilates_common_velocity(rng):
    model, disc, state, system = uniform_system(3)
    lay = disc.layout
    x = np.zeros(lay.size)
    u = rng.standard_normal(lay.dim_vel)
    for i in range(3):
        x[lay.vel(i)] = u
    A = system.blocks["A"]
    assert np.abs(A @ x).max() <= 1e-13 * np.abs(A).max() * np.abs(u).max()
    w = np.zeros(lay.size)
    w[lay.vel(0)] = u
    assert w @ (A @ w) > 0


def test_transport_block_scales_inversely_with_diffusivity():
    As = {}
    for s in (1.0, 2.0, 8.0):
        _, _, _, system = uniform_system(2, D=0.5 * s)
        As[s] = system.blocks["A"].toarray()
    T = (As[1.0] - As[2.0]) / (1 - 1 / 2)  # un-augmented part at D = 0.5
    G = As[1.0] - T
    assert np.allclose(As[8.0], T / 8 + G, rtol=0, atol=1e-13 * np.abs(As[1.0]).max())


def test_compliance_block_matches_dense_oracle():
    mesh = build_mesh([[0.1, 0.0], [1.0, 0.3], [0.2, 0.9]], [[0, 1, 2]])
    model = binary_model(eta=0.25, zeta=2.0)
    disc = Discretization(mesh, 2)
    state = interpolate_coefficients(np.array([1.0, 1.0]), model, disc)
    Lam = assemble_system(state, model, disc).blocks["Lambda"].toarray()[disc.layout.slice("tau"),
                                                                        disc.layout.slice("tau")]
    # independent: 2D compliance A s = (s - tr(s) I / 2) / (2 eta) + tr(s) I / (4 zeta), degree-10 rule
    S = FunctionSpace(mesh, "AW")
    rule = quadrature(10)
    x = np.einsum("qa,ai->qi", rule.points, mesh.vertices[mesh.cells[0]])
    val, _, _ = S.basis_at(rule.points, x=x[None])
    val = val[0]  # (24, nq, 3)
    full = np.zeros((24, len(rule.weights), 2, 2))
    full[..., 0, 0], full[..., 0, 1], full[..., 1, 0], full[..., 1, 1] = val[..., 0], val[..., 1], val[..., 1], val[..., 2]
    tr = full[..., 0, 0] + full[..., 1, 1]
    dev = full - 0.5 * tr[..., None, None] * np.eye(2)
    As = dev / (2 * 0.25) + tr[..., None, None] * np.eye(2) / (4 * 2.0)
    area = abs(mesh.cell_areas()[0])
    local = 2 * area * np.einsum("q,bqij,dqij->bd", rule.weights, As, full)
    dofs = S.cell_dofs[0]
    oracle = np.zeros_like(Lam)
    oracle[np.ix_(dofs, dofs)] = local
    assert np.allclose(Lam, oracle, rtol=1e-10, atol=1e-12 * np.abs(oracle).max())
    a, b = compliance_weights(model)
    assert a == pytest.approx(2.0) and b == pytest.approx(0.125 - 1.0)


def test_mean_value_rows_integrate_constants():
    model, disc, state, system = uniform_system(3, family=2)
    lay = disc.layout
    x = np.zeros(lay.size)
    x[lay.mu(1)] = 1.0
    x[lay.slice("p")] = 2.0
    r = system.K @ x
    lam = r[lay.slice("lambda")]
    assert np.allclose(lam, [0.0, 1.0, 2.0], atol=1e-14)


def test_zero_data_gives_zero_rhs():
    model, disc, state, _ = uniform_system()
    data = BoundaryData.zero(disc.mesh.tags, 2)
    b = assemble_rhs(state, model, disc, data)
    assert np.count_nonzero(b) == 0


def test_constant_body_force_rhs():
    model, disc, state, _ = uniform_system(2)
    rho = 0.4 + 1.2
    data = BoundaryData.zero(disc.mesh.tags, 2)
    b = assemble_rhs(state, model, disc, data, body_force=lambda x: np.tile([0.0, -1.0], (len(x), 1)))
    bv = b[disc.layout.slice("v")].reshape(-1, 2, 3)
    area = disc.mesh.cell_areas()
    assert np.allclose(bv[:, 1, :], rho * area[:, None] / 3, rtol=1e-13)
    assert np.allclose(bv[:, 0, :], 0.0, atol=1e-15)
    others = np.delete(b, np.arange(disc.layout.size)[disc.layout.slice("v")])
    assert np.count_nonzero(others) == 0


def test_missing_tag_is_named():
    model, disc, state, _ = uniform_system()
    data = BoundaryData.zero(["inlet1"], 2)
    with pytest.raises(BoundaryDataError, match="wall"):
        assemble_rhs(state, model, disc, data)


def test_incompatible_boundary_data_warns():
    model, disc, state, _ = uniform_system()
    data = BoundaryData({"wall": lambda x, n: np.zeros((len(x), 2))},
                        {"wall": lambda x, n: np.ones((len(x), 2))})
    with pytest.warns(UserWarning, match="max defect 3"):
        assemble_rhs(state, model, disc, data)


def test_compatible_boundary_data_silent(case):
    disc, state = coefficient_state(case, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        b = assemble_rhs(state, case.model, disc, case.boundary_data(disc.mesh), case.body_force, case.reaction)
    assert np.all(np.isfinite(b)) and np.abs(b).max() > 0


def test_driving_force_of_constants_vanishes():
    model, disc, state, _ = uniform_system(2, family=2)
    w = np.full(disc.X.dim, 3.0)
    q = np.full(disc.P.dim, -1.0)
    assert np.abs(discrete_driving_force(w, q, state, 0, disc)).max() <= 1e-13


@pytest.mark.parametrize("family", [1, 2])
def test_driving_force_representable(case, rng, family):
    disc, state = coefficient_state(case, 4, family)
    w = rng.standard_normal(disc.X.dim)
    q = rng.standard_normal(disc.P.dim)
    rule = quadrature(8)
    _, gw = disc.X.evaluate(w, rule)
    _, gq = disc.P.evaluate(q, rule)
    omega, _ = state.omega_at(disc.P.tabulate(rule).values)
    for i in range(case.n):
        pointwise = -state.cell_conc[:, i, None, None] * gw + omega[..., i, None] * gq
        got, _ = disc.W.evaluate(discrete_driving_force(w, q, state, i, disc), rule)
        assert np.abs(got - pointwise).max() <= 1e-13 * np.abs(pointwise).max()
