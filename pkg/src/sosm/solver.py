"""Linear solves and the outer Picard iteration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    Discretization,
    assemble_rhs,
    assemble_system,
    discrete_driving_force,
    interpolate_coefficients,
    make_state,
)
from .errors import InvalidArgumentError, NonConvergenceError, SolverError
from .thermo import IdealGas, gibbs_duhem_residual

RESIDUAL_TOL = 1e-9
PIVOT_TOL = 1e-14
RUIZ_SWEEPS = 12
REG_SHIFT = 1e-8
REG_SWEEPS = 2


@dataclass
class SolutionState:
    """Coefficient vector of one linear solve, with block accessors."""

    coeffs: np.ndarray
    disc: Discretization
    iteration: int = 0

    @property
    def layout(self):
        return self.disc.layout

    def mu(self, i):
        return self.coeffs[self.layout.mu(i)]

    @property
    def tau(self):
        return self.coeffs[self.layout.slice("tau")]

    @property
    def p(self):
        return self.coeffs[self.layout.slice("p")]

    def vel(self, i):
        """Velocity ``i``; ``i == n`` is the mass-average velocity."""
        return self.coeffs[self.layout.vel(i)]

    @property
    def v(self):
        return self.vel(self.layout.n)

    @property
    def multipliers(self):
        return self.coeffs[self.layout.slice("lambda")]

    @classmethod
    def zeros(cls, disc):
        return cls(np.zeros(disc.layout.size), disc)


@dataclass(frozen=True)
class PicardOptions:
    """Options of the outer iteration.

    ``norm`` selects the stopping measure: ``"l2"`` is the Euclidean norm of
    the coefficient update, ``"theta"`` the functional graph norm.
    ``reuse_factorization`` refines with the previous factorization before
    refactorizing.
    """

    tol: float = 1e-7
    relaxation: float = 1.0
    max_iter: int = 50
    norm: str = "l2"
    reuse_factorization: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError("tolerance must be positive")
        if not 0 < self.relaxation <= 1:
            raise InvalidArgumentError("relaxation must lie in (0, 1]")
        if int(self.max_iter) < 1:
            raise InvalidArgumentError("max_iter must be at least 1")
        if self.norm not in ("l2", "theta"):
            raise InvalidArgumentError(f"unknown norm {self.norm!r}; expected 'l2' or 'theta'")


# ---------------------------------------------------------------- linear algebra


def ruiz_scaling(K, sweeps=RUIZ_SWEEPS):
    """Diagonal ``d`` making the rows and columns of ``diag(d) K diag(d)`` near unit max-norm."""
    K = sp.csr_matrix(K)
    d = np.ones(K.shape[0])
    A = abs(K)
    for _ in range(sweeps):
        S = sp.diags(d) @ A @ sp.diags(d)
        r = np.sqrt(np.asarray(S.max(axis=1).todense()).ravel())
        r[r == 0] = 1.0
        d /= r
        if np.max(np.abs(r - 1.0)) < 1e-3:
            break
    return d


def spectral_norm(K, iters=30):
    """Power-iteration estimate of ``|K|_2`` for symmetric ``K`` (from below)."""
    x = np.ones(K.shape[0]) / math.sqrt(K.shape[0])
    lam = 0.0
    for _ in range(iters):
        y = K @ x
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return 0.0
        x = y / lam
    return lam


def _factor(M, permc_spec, regularize=None):
    """Ruiz-scaled SuperLU factorization; returns ``(solve, pivot_ratio)``.

    ``regularize`` is a boolean mask of rows whose scaled diagonal is shifted
    by ``-REG_SHIFT``; the other rows are shifted by ``+REG_SHIFT``. The shift
    makes a saddle point matrix with a semidefinite leading block
    quasi-definite, so a symmetric fill-reducing order can be used
    without pivoting; each solve then refines against the unshifted matrix.
    """
    d = ruiz_scaling(M)
    Ms = (sp.diags(d) @ M @ sp.diags(d)).tocsc()
    try:
        if regularize is None:
            lu = spla.splu(Ms, permc_spec=permc_spec, diag_pivot_thresh=0.1)
        else:
            Ke = (Ms + sp.diags(np.where(regularize, -REG_SHIFT, REG_SHIFT))).tocsc()
            lu = spla.splu(Ke, permc_spec=permc_spec, diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}", {"pivot_ratio": 0.0}) from exc
    piv = np.abs(lu.U.diagonal())
    ratio = float(piv.min() / piv.max()) if piv.size else 1.0
    # with a shift, pivots of order REG_SHIFT are expected; singularity then
    # shows as refinement failing to meet the residual bound
    if regularize is None and not ratio > PIVOT_TOL:
        raise SolverError(
            f"matrix is numerically singular (pivot ratio {ratio:.2e})",
            {"pivot_ratio": ratio, "size": M.shape[0]},
        )
    if regularize is None:
        return (lambda r: d * lu.solve(d * r)), ratio

    def solve(r):
        rs = d * r
        y = lu.solve(rs)
        for _ in range(REG_SWEEPS):
            y = y + lu.solve(rs - Ms @ y)
        return d * y

    return solve, ratio


def velocity_congruence(layout):
    """Sparse ``T`` with ``v_i = w_i + v``: species velocities to relative velocities.

    In the relative variables the transport form depends only on ``w`` and is
    positive definite there.
    """
    N = layout.size
    dv = layout.dim_vel
    vcols = layout.vel(layout.n).start + np.arange(dv)
    rows = [np.arange(N)]
    cols = [np.arange(N)]
    for i in range(layout.n):
        rows.append(layout.vel(i).start + np.arange(dv))
        cols.append(vcols)
    r, c = np.concatenate(rows), np.concatenate(cols)
    return sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(N, N))


def _condensed_solver(K, layout):
    """Solver for ``K`` eliminating relative species velocities cell by cell.

    Relative-velocity unknowns of one cell couple only to each other in the
    transport block, so their Schur complement is formed from small dense
    inverses and the remaining system is factorized sparsely.
    """
    n, dv = layout.n, layout.dim_vel
    C = dv // 6
    T = velocity_congruence(layout)
    Kt = (T.T @ K @ T).tocsr()
    # relative-velocity dofs ordered cell by cell: (cell, species, local)
    widx = (
        layout.vel(0).start
        + np.arange(n)[None, :, None] * dv
        + 6 * np.arange(C)[:, None, None]
        + np.arange(6)[None, None, :]
    ).reshape(-1)
    mask = np.ones(layout.size, bool)
    mask[widx] = False
    keep = np.flatnonzero(mask)
    Aww = (-Kt[widx][:, widx]).tocoo()
    bs = 6 * n
    same = (Aww.row // bs) == (Aww.col // bs)
    blocks = np.zeros((C, bs, bs))
    np.add.at(blocks, (Aww.row[same] // bs, Aww.row[same] % bs, Aww.col[same] % bs), Aww.data[same])
    if np.any(np.abs(Aww.data[~same]) > 0):
        raise SolverError("relative-velocity block is not cell-local", {})
    eig_min = np.linalg.eigvalsh(blocks)[:, 0]
    if np.any(eig_min <= 0):
        raise SolverError(
            "relative-velocity transport block is not positive definite",
            {"min_eigenvalue": float(eig_min.min())},
        )
    inv = np.linalg.inv(blocks)
    inv = 0.5 * (inv + np.swapaxes(inv, 1, 2))
    Ainv = sp.block_diag(list(inv), format="csr")
    Bw = Kt[widx][:, keep]
    S = (Kt[keep][:, keep] + Bw.T @ Ainv @ Bw).tocsc()
    # kept order is mu, tau, p, v, lambda; the last two carry the zero diagonal
    tail = layout.dim_vel + layout.n + 1
    negative = np.zeros(len(keep), bool)
    negative[len(keep) - tail:] = True
    solve_s, ratio = _factor(S, "MMD_AT_PLUS_A", regularize=negative)

    def solve(b):
        bt = T.T @ b
        bw = bt[widx]
        y = solve_s(bt[keep] + Bw.T @ (Ainv @ bw))
        z = np.empty(layout.size)
        z[keep] = y
        z[widx] = Ainv @ (Bw @ y - bw)
        return T @ z

    return solve, ratio


class FactorizationCache:
    """Keeps the last factorization so nearby systems can reuse it.

    A cached factorization of a previous matrix serves as the correction
    operator of iterative refinement on the current matrix; when the
    residual contracts by less than ``max_contraction`` per step the matrix is
    refactorized.
    """

    def __init__(self, max_contraction=0.5, max_steps=25):
        self.solve = None
        self.ratio = None
        self.size = None
        self.max_contraction = max_contraction
        self.max_steps = max_steps
        self.factorizations = 0


def _refine(K, b, solve, d, normK, max_steps, max_contraction):
    """Iterative refinement ``x += solve(b - K x)``; returns ``(x, res, bound, steps, ok)``.

    Residuals are measured in the equilibrated metric ``D (b - K x)`` against
    ``normK = |D K D|``, so the bound does not depend on the units of the
    unknowns.
    """
    x = solve(b)
    nb = np.linalg.norm(d * b)
    prev = None
    res = bound = float("nan")
    for step in range(1, max_steps + 1):
        if not np.all(np.isfinite(x)):
            return x, float("inf"), bound, step, False
        r = b - K @ x
        res = float(np.linalg.norm(d * r))
        bound = RESIDUAL_TOL * (normK * np.linalg.norm(x / d) + nb)
        if res <= bound:
            return x, res, bound, step, True
        if prev is not None and res > max_contraction * prev:
            return x, res, bound, step, False
        prev = res
        x = x + solve(r)
    return x, res, bound, max_steps, False


def solve_linear(system, b=None, condense=True, cache=None):
    """Solve ``K x = b`` by scaled sparse LU with a residual check.

    With ``condense`` and a block layout, relative species velocities are
    eliminated cell by cell before factorizing (same solution, smaller
    factor). A :class:`FactorizationCache` lets a previous factorization be
    reused through iterative refinement. Returns ``(x, info)`` with the
    residual and the smallest-to-largest pivot ratio. Raises
    :class:`SolverError` with these diagnostics on a singular factorization
    or an unmet residual bound ``|D(K x - b)| <= 1e-9 (|DKD| |x/D| + |Db|)``
    with ``D`` the Ruiz equilibration of ``K``.
    """
    K = sp.csr_matrix(system.K)
    b = system.b if b is None else b
    if b is None:
        raise InvalidArgumentError("no right-hand side supplied")
    b = np.asarray(b, dtype=float)
    layout = getattr(system, "layout", None)
    d = ruiz_scaling(K)
    normK = spectral_norm(sp.diags(d) @ K @ sp.diags(d))
    info = {"size": K.shape[0], "reused": False}
    if cache is not None and cache.solve is not None and cache.size == K.shape[0]:
        x, res, bound, steps, ok = _refine(K, b, cache.solve, d, normK, cache.max_steps, cache.max_contraction)
        if ok:
            info.update(pivot_ratio=cache.ratio, residual=res, residual_bound=float(bound),
                        refinement_steps=steps, reused=True)
            return x, info
    if condense and layout is not None and layout.size == K.shape[0]:
        solve, ratio = _condensed_solver(K, layout)
    else:
        solve, ratio = _factor(K, "COLAMD")
    if cache is not None:
        cache.solve, cache.ratio, cache.size = solve, ratio, K.shape[0]
        cache.factorizations += 1
    x, res, bound, steps, ok = _refine(K, b, solve, d, normK, 4, 1.0)
    info.update(pivot_ratio=ratio, residual=res, residual_bound=float(bound), refinement_steps=steps)
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution", info)
    if not ok:
        raise SolverError(f"residual {res:.3e} exceeds bound {bound:.3e}", info)
    return x, info


# ---------------------------------------------------------------- norms


def _dg_divergence(coeffs, disc):
    """Cellwise divergence ``(C,)`` of a DG1 vector field."""
    V = np.asarray(coeffs).reshape(-1, 2, 3)  # (C, k, a)
    g = disc.W.geometry.grad_bary  # (C, 3, 2)
    return np.einsum("cka,cak->c", V, g)


def _field(space, coeffs, rule):
    return space.evaluate(coeffs, rule)


def theta_q_diff_norm(a, b, state, model):
    """Graph norm of ``a - b`` on the potential-stress-pressure and velocity spaces.

    Squared terms: ``|ds|^2 + |dq|^2 + |div ds - grad dq|^2`` plus, per
    species, ``|dw_i|^2 + |-c_i grad dw_i + omega_i grad dq|^2``, plus the L2
    norms of all velocity differences.
    """
    if a.layout != b.layout:
        raise InvalidArgumentError("solutions have different layouts")
    disc = a.disc
    d = SolutionState(a.coeffs - b.coeffs, disc)
    rule = disc.rule
    dx = disc.tab(disc.W).dx
    tv, td = _field(disc.S, d.tau, rule)
    qv, qg = _field(disc.P, d.p, rule)
    total = np.sum(dx * (tv[..., 0] ** 2 + 2 * tv[..., 1] ** 2 + tv[..., 2] ** 2))
    total += np.sum(dx * qv[..., 0] ** 2)
    total += np.sum(dx * np.sum((td - qg) ** 2, axis=-1))
    n = model.n
    for i in range(n):
        wv, _ = _field(disc.X, d.mu(i), rule)
        total += np.sum(dx * wv[..., 0] ** 2)
        df = discrete_driving_force(d.mu(i), d.p, state, i, disc)
        dv, _ = _field(disc.W, df, rule)
        total += np.sum(dx * np.sum(dv**2, axis=-1))
    for i in range(n + 1):
        vv, _ = _field(disc.W, d.vel(i), rule)
        total += np.sum(dx * np.sum(vv**2, axis=-1))
    return math.sqrt(max(float(total), 0.0))


# ---------------------------------------------------------------- Picard


@dataclass
class PicardResult:
    solution: SolutionState
    state: object
    history: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.history)


def relax(state, new, theta, model, mesh):
    """``(1 - theta) old + theta new`` on both concentration samples."""
    cell = (1.0 - theta) * state.cell_conc + theta * new.cell_conc
    vert = (1.0 - theta) * state.vertex_conc + theta * new.vertex_conc
    return make_state(mesh, cell, vert, model, state.kappa, new.iteration)


def picard(model, disc, data, body_force=None, reaction=None, init=None, opts=PicardOptions(), callback=None):
    """Picard iteration on the coefficient state.

    Each step assembles and solves the linear system for the current
    concentrations, recovers new concentrations from the chemical potentials
    and pressure, and relaxes them. Iteration stops when the update norm of
    the unknowns drops to ``opts.tol``; the first update is measured from
    zero. Returns a :class:`PicardResult`; raises
    :class:`NonConvergenceError` with the history after ``opts.max_iter``
    steps.
    """
    if init is None:
        raise InvalidArgumentError("initial concentrations are required")
    state = interpolate_coefficients(init, model, disc)
    prev = SolutionState.zeros(disc)
    history = []
    cache = FactorizationCache() if opts.reuse_factorization else None
    for k in range(1, int(opts.max_iter) + 1):
        system = assemble_system(state, model, disc)
        b = assemble_rhs(state, model, disc, data, body_force, reaction)
        x, info = solve_linear(system, b, cache=cache)
        sol = SolutionState(x, disc, k)
        if opts.norm == "l2":
            diff = float(np.linalg.norm(sol.coeffs - prev.coeffs))
        else:
            diff = theta_q_diff_norm(sol, prev, state, model)
        history.append({
            "iteration": k,
            "diff_norm": diff,
            "residual": info["residual"],
            "pivot_ratio": info["pivot_ratio"],
            "refactorized": not info["reused"],
            "min_concentration": float(state.cell_conc.min()),
            "floored": state.floored,
        })
        if callback is not None:
            callback(sol, state, history[-1])
        if not math.isfinite(diff):
            raise NonConvergenceError(f"non-finite update at iteration {k}", history=history)
        if diff <= opts.tol:
            return PicardResult(sol, state, history)
        new = interpolate_coefficients(sol, model, disc, kappa=state.kappa, iteration=k)
        state = relax(state, new, opts.relaxation, model, disc.mesh)
        prev = sol
    raise NonConvergenceError(
        f"Picard iteration did not converge in {opts.max_iter} iterations "
        f"(last update {history[-1]['diff_norm']:.3e})",
        history=history,
        residual=history[-1]["diff_norm"],
    )


# ---------------------------------------------------------------- postprocessing


def driving_forces_at_quadrature(solution, state, model):
    """Discrete driving forces ``(C, nq, n, 2)`` at assembly quadrature points."""
    disc = solution.disc
    out = []
    for i in range(model.n):
        df = discrete_driving_force(solution.mu(i), solution.p, state, i, disc)
        out.append(disc.W.evaluate(df, disc.rule)[0])
    return np.stack(out, axis=2)


def postprocess(solution, model, state, p_ref=None):
    """Derived fields at the assembly quadrature points.

    Returns a dict with the Cauchy stress ``sigma`` ``(C, nq, 3)``, the
    mechanical pressure ``p_mech``, the mass-average defect
    ``v - sum_i omega_i v_i`` and its L2 norm, the pressure shifted by the
    reference value, and the Gibbs-Duhem residual.
    """
    disc = solution.disc
    rule = disc.rule
    dx = disc.tab(disc.W).dx
    tau, _ = disc.S.evaluate(solution.tau, rule)
    p, _ = disc.P.evaluate(solution.p, rule)
    p = p[..., 0]
    sigma = tau.copy()
    sigma[..., 0] -= p
    sigma[..., 2] -= p
    div_v = _dg_divergence(solution.v, disc)[:, None]
    p_mech = p - model.zeta * div_v
    omega, _ = state.omega_at(disc.tab(disc.P).values)
    v, _ = disc.W.evaluate(solution.v, rule)
    defect = v.copy()
    for i in range(model.n):
        vi, _ = disc.W.evaluate(solution.vel(i), rule)
        defect -= omega[..., i, None] * vi
    if p_ref is None:
        p_ref = model.law.p_ref if isinstance(model.law, IdealGas) else 0.0
    gd = gibbs_duhem_residual(driving_forces_at_quadrature(solution, state, model), dx)
    return {
        "x": disc.tab(disc.W).x,
        "dx": dx,
        "sigma": sigma,
        "p_mech": p_mech,
        "p_shifted": p + p_ref,
        "defect": defect,
        "defect_norm": float(np.sqrt(np.sum(dx * np.sum(defect**2, axis=-1)))),
        "gibbs_duhem": gd,
        "trace_integral": float(np.sum(dx * (sigma[..., 0] + sigma[..., 2]))),
    }
