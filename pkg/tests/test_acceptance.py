"""Acceptance criteria, one test per criterion or sub-criterion.

Every test prints a ``criterion N [PASS|FAIL]`` line, collected again in the
terminal summary. Criteria this implementation does not meet are marked
``xfail(strict=True)``: they run at full tolerance, report FAIL, and would
turn the suite red if they started passing unnoticed.
"""
import csv

import numpy as np
import pytest

from conftest import coefficient_state, record_criterion
from sosm.assembly import assemble_rhs, assemble_system, discrete_driving_force
from sosm.cases import MixingConfig, run_mixing
from sosm.errors import NonConvergenceError
from sosm.fe import FunctionSpace, aw_local_basis
from sosm.mesh import build_mesh, unit_square_mesh
from sosm.quadrature import quadrature
from sosm.solver import solve_linear
from sosm.thermo import augment, transport_matrix
from sosm.verify import rates, write_rates_csv
from test_fe import aspect_ratio, aw_functionals, random_triangles
from test_thermo import quadratic_form_oracle

L2_FIELDS = ("mu_1", "mu_2", "mu_3", "p", "tau")
FIRST_ORDER_FIELDS = ("vel_1", "vel_2", "vel_3", "d_1", "d_2", "d_3")
SLOPE_L2, SLOPE_FIRST = 1.8, 0.9
RUNTIME_LIMIT = 300.0


def _slope_check(seq):
    table = rates(seq.records)
    low = {k: table.slopes[k] for k in L2_FIELDS if not table.slopes[k] >= SLOPE_L2}
    low.update({k: table.slopes[k] for k in FIRST_ORDER_FIELDS if not table.slopes[k] >= SLOPE_FIRST})
    worst_l2 = min(table.slopes[k] for k in L2_FIELDS)
    worst_first = min(table.slopes[k] for k in FIRST_ORDER_FIELDS)
    return table, low, f"min L2 slope {worst_l2:.3f} (>= {SLOPE_L2}), min velocity/driving-force slope " \
                       f"{worst_first:.3f} (>= {SLOPE_FIRST})"


def test_criterion_1_mms_family1(mms_runs_family1):
    _, low, detail = _slope_check(mms_runs_family1)
    fast = mms_runs_family1.seconds <= RUNTIME_LIMIT
    ok = not low and fast
    record_criterion(1, "MMS convergence, family 1", ok,
                     f"{detail}; runtime {mms_runs_family1.seconds:.0f} s (<= {RUNTIME_LIMIT:.0f} s)")
    assert not low, low
    assert fast


def test_criterion_2_mms_family2(mms_runs_family1, mms_runs_family2, tmp_path):
    table, low, detail = _slope_check(mms_runs_family2)
    write_rates_csv(table, tmp_path / "f2.csv")
    write_rates_csv(rates(mms_runs_family1.records), tmp_path / "f1.csv")
    schema = [[(row[0] if i == 0 else row[1]) for i, row in enumerate(csv.reader(open(tmp_path / f)))]
              for f in ("f1.csv", "f2.csv")]
    same_schema = schema[0] == schema[1]
    record_criterion(2, "MMS convergence, family 2", not low and same_schema,
                     f"{detail}; CSV schema shared with family 1: {same_schema}")
    assert not low, low
    assert same_schema


def test_criterion_3_picard_iterations(mms_runs_family1):
    its = [r.iterations for r in mms_runs_family1.records]
    ok = all(5 <= k <= 10 for k in its)
    record_criterion(3, "Picard iterations, family 1", ok,
                     f"iterations {its} at n=4,8,16,32 (reference 6 at n=4 and 7 at n=32)")
    assert ok


def _composite_gains(seq):
    s = rates(seq.records).slopes
    n = 3
    grad_mu = min(s[f"grad_mu_{i}"] for i in range(1, n + 1))
    d_gain = min(s[f"d_{i}"] for i in range(1, n + 1)) - min(grad_mu, s["grad_p"])
    sigma_gain = s["div_sigma"] - min(s["div_tau"], s["grad_p"])
    return d_gain, sigma_gain


def test_criterion_4_composite_rates_family2(mms_runs_family2):
    d_gain, sigma_gain = _composite_gains(mms_runs_family2)
    ok = d_gain >= 0.5 and sigma_gain >= 0.5
    record_criterion(4, "composite vs component slopes, family 2", ok,
                     f"driving-force gain {d_gain:.3f}, stress-divergence gain {sigma_gain:.3f} (>= 0.5)")
    assert ok


def test_criterion_4_stress_divergence_family1(mms_runs_family1):
    _, sigma_gain = _composite_gains(mms_runs_family1)
    ok = sigma_gain >= 0.5
    record_criterion(4, "composite vs component slopes, family 1, stress divergence", ok,
                     f"gain {sigma_gain:.3f} (>= 0.5)")
    assert ok


@pytest.mark.xfail(strict=True, reason="family-1 driving forces use cellwise-constant concentrations and "
                                       "converge at first order, like the gradients they combine")
def test_criterion_4_driving_force_family1(mms_runs_family1):
    d_gain, _ = _composite_gains(mms_runs_family1)
    ok = d_gain >= 0.5
    record_criterion(4, "composite vs component slopes, family 1, driving forces", ok,
                     f"gain {d_gain:.3f} (>= 0.5)")
    assert ok


def test_criterion_5_transport_matrix(rng):
    worst = dict(rowsum=0.0, psd=np.inf, pd=np.inf, identity=0.0)
    for k in range(1000):
        n = (2, 3, 4)[k % 3]
        c = rng.uniform(0.01, 10, n)
        D = rng.uniform(0.1, 5, (n, n))
        D = 0.5 * (D + D.T)
        RT = rng.uniform(0.5, 3000)
        M = transport_matrix(c, D, RT)
        scale = np.abs(M).max()
        worst["rowsum"] = max(worst["rowsum"], np.abs(M.sum(axis=1)).max() / scale)
        worst["psd"] = min(worst["psd"], np.linalg.eigvalsh(M)[0] / scale)
        omega = rng.dirichlet(np.ones(n))
        gamma = rng.uniform(0.01, 10)
        Mg = augment(M, omega, gamma)
        worst["pd"] = min(worst["pd"], np.linalg.eigvalsh(Mg)[0])
        v = rng.standard_normal((n, 2))
        lhs = np.einsum("ik,ij,jk->", v, Mg, v)
        rhs = quadratic_form_oracle(v, c, D, RT, omega, gamma)
        worst["identity"] = max(worst["identity"], abs(lhs - rhs) / abs(rhs))
    ok = (worst["rowsum"] <= 1e-13 and worst["psd"] >= -1e-13 and worst["pd"] > 0
          and worst["identity"] <= 1e-12)
    record_criterion(5, "transport matrix properties", ok,
                     f"max relative row sum {worst['rowsum']:.1e}, min scaled eigenvalue {worst['psd']:.1e}, "
                     f"min augmented eigenvalue {worst['pd']:.1e}, max identity error {worst['identity']:.1e}")
    assert ok


def test_criterion_6_system_structure(case, rng):
    notes = []
    ok = True
    for family in (1, 2):
        for n in (2, 4, 8):
            disc, state = coefficient_state(case, n, family)
            system = assemble_system(state, case.model, disc)
            K = system.K.tocsr()
            ok &= (K != K.T).nnz == 0
            for name in ("Lambda", "A"):
                B = system.blocks[name].tocsr()
                tol = 1e-12 * abs(B).max()
                for _ in range(50):
                    y = rng.standard_normal(B.shape[0])
                    ok &= y @ (B @ y) >= -tol * (y @ y)
            b = assemble_rhs(state, case.model, disc, case.boundary_data(disc.mesh), case.body_force, case.reaction)
            _, info = solve_linear(system, b)
            ok &= info["residual"] <= info["residual_bound"]
            notes.append(f"f{family} n={n} residual {info['residual'] / info['residual_bound']:.0e} of bound")
    record_criterion(6, "assembled system structure", bool(ok),
                     "exact symmetry, PSD blocks on 50 vectors, direct solves: " + "; ".join(notes))
    assert ok


def _perturbed_mesh(rng, n=4):
    base = unit_square_mesh(n)
    x = base.vertices.copy()
    inner = (x > 0).all(axis=1) & (x < 1).all(axis=1)
    x[inner] += rng.uniform(-0.2, 0.2, (inner.sum(), 2)) / n
    return build_mesh(x, base.cells)


def _max_traction_jump(mesh, rng):
    S = FunctionSpace(mesh, "AW")
    coeffs = rng.standard_normal(S.dim)
    normals = mesh.edge_normals()
    t = np.linspace(0.05, 0.95, 7)
    worst = 0.0
    for e in np.flatnonzero(mesh.edge_cells[:, 1] >= 0):
        a, b = mesh.edges[e]
        nrm = normals[e]
        tr = []
        for c in mesh.edge_cells[e]:
            bary = np.zeros((len(t), 3))
            cell = mesh.cells[c].tolist()
            bary[:, cell.index(a)], bary[:, cell.index(b)] = 1 - t, t
            sig = S.evaluate_at(coeffs, [c], bary[None])[0][0]
            tr.append(np.stack([sig[:, 0] * nrm[0] + sig[:, 1] * nrm[1], sig[:, 1] * nrm[0] + sig[:, 2] * nrm[1]], 1))
        worst = max(worst, np.abs(tr[0] - tr[1]).max() / np.abs(tr[0]).max())
    return worst


def test_criterion_7_element_suite(case, rng):
    verts = random_triangles(rng, 100, max_aspect=20.0)
    assert max(aspect_ratio(v) for v in verts) <= 20.0
    kron = np.abs(aw_functionals(aw_local_basis(verts), verts) - np.eye(24)).max()
    jump = _max_traction_jump(_perturbed_mesh(rng), rng)
    rep = 0.0
    for family in (1, 2):
        disc, state = coefficient_state(case, 4, family)
        rule = quadrature(8)
        w, q = rng.standard_normal(disc.X.dim), rng.standard_normal(disc.P.dim)
        _, gw = disc.X.evaluate(w, rule)
        _, gq = disc.P.evaluate(q, rule)
        omega, _ = state.omega_at(disc.P.tabulate(rule).values)
        for i in range(case.n):
            pointwise = -state.cell_conc[:, i, None, None] * gw + omega[..., i, None] * gq
            got, _ = disc.W.evaluate(discrete_driving_force(w, q, state, i, disc), rule)
            rep = max(rep, np.abs(got - pointwise).max() / np.abs(pointwise).max())
    ok = kron <= 1e-10 and jump <= 1e-10 and rep <= 1e-13
    record_criterion(7, "element suite", ok,
                     f"Kronecker error {kron:.1e} on 100 triangles, relative traction jump {jump:.1e}, "
                     f"driving-force representability {rep:.1e}")
    assert ok


def test_criterion_8_mass_average_defect(mms_runs_family1, mms_runs_family2):
    seqs = {f: [r.defect for r in s.records] for f, s in ((1, mms_runs_family1), (2, mms_runs_family2))}
    ok = all(all(b < a for a, b in zip(v, v[1:])) for v in seqs.values())
    detail = "; ".join(f"family {f}: " + ", ".join(f"{e:.2e}" for e in v) for f, v in seqs.items())
    record_criterion(8, "mass-average defect decreases with h", ok, detail)
    assert ok


def test_criterion_9_benzene_inlet_speed():
    speed = MixingConfig(A12=0.0, A21=0.0).v_benzene
    ok = abs(speed - 3.277e-6) <= 5e-10
    record_criterion(9, "mixing case, benzene inlet speed", ok, f"{speed * 1e6:.4f} um/s (3.277 expected)")
    assert ok


@pytest.mark.xfail(strict=True, reason="with physical viscosities the Picard loop does not contract; "
                                       "see the decisions ledger")
def test_criterion_9_physical_parameters_converge():
    cfg = MixingConfig(A12=0.0, A21=0.0)
    try:
        res = run_mixing(cfg)
        ok, detail = True, f"converged in {res.result.iterations} iterations"
    except NonConvergenceError as exc:
        ok = False
        detail = f"no convergence in {cfg.max_iter} iterations at relaxation {cfg.relaxation}, " \
                 f"last update {exc.history[-1]['diff_norm']:.2e} (tol {cfg.tol:.0e})"
    record_criterion(9, "mixing case, convergence with physical parameters", ok, detail)
    assert ok


def test_criterion_9_balances_benign_parameters(benign_mixing):
    d = benign_mixing.diagnostics
    balance = float(np.max(d["species_balance_relative"]))
    multiplier = float(np.max(d["species_multiplier_balance"]))
    ok = (d["net_mass_flux_relative"] <= 1e-8 and balance <= 1e-6 and multiplier <= 1e-6
          and d["pressure_finite"] and d["pressure_oscillation"] == 0.0
          and d["defect_max"] > 10 * benign_mixing.config.tol)
    record_criterion(9, "mixing case balances and qualitative checks (benign viscosities)", ok,
                     f"{d['iterations']} iterations, net mass {d['net_mass_flux_relative']:.1e}, species balance "
                     f"{balance:.1e}, multiplier balance {multiplier:.1e}, pressure oscillation "
                     f"{d['pressure_oscillation']}, defect max {d['defect_max']:.2e}")
    assert ok
