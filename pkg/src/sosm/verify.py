"""Manufactured solutions, error norms and convergence rates.

The manufactured solution is an ideal-gas mixture on the unit square with
``RT = 1``, unit molar masses and diffusivities ``D_ij = D_i D_j``. For a
smooth scalar ``g`` the concentrations ``c_i = exp(g / D_i)`` and velocities
``v_i = D_i grad g`` solve the transport relations exactly; every other field
and forcing term follows from them. Derivatives are taken symbolically.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
import sympy

from .assembly import BoundaryData, Discretization, discrete_driving_force
from .errors import InvalidArgumentError
from .fe import FunctionSpace
from .mesh import unit_square_mesh
from .quadrature import quadrature
from .solver import PicardOptions, picard
from .thermo import IdealGas, MaterialModel

ERROR_DEGREE = 10
DEFAULT_D = (0.75, 1.0, 1.25)

_x, _y = sympy.symbols("x y", real=True)


def default_g():
    """``g = x y (1 - x)(1 - y) / 5``."""
    return _x * _y * (1 - _x) * (1 - _y) / 5


def _square_average(fun, npts=40):
    """Average of ``fun`` over the unit square by tensor Gauss-Legendre."""
    s, w = np.polynomial.legendre.leggauss(npts)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    X, Y = np.meshgrid(s, s, indexing="ij")
    W = np.outer(w, w)
    return float(np.sum(W * fun(np.stack([X.ravel(), Y.ravel()], axis=1)).reshape(X.shape)))


def _vectorise(exprs):
    """Callable ``f(points (N, 2)) -> (N, len(exprs))`` from sympy expressions."""
    fns = [sympy.lambdify((_x, _y), e, "numpy") for e in exprs]

    def f(pts):
        pts = np.asarray(pts, dtype=float)
        shape = pts.shape[:-1]
        X, Y = pts[..., 0].ravel(), pts[..., 1].ravel()
        out = np.stack([np.broadcast_to(np.asarray(fn(X, Y), dtype=float), X.shape) for fn in fns], axis=-1)
        return out.reshape(shape + (len(fns),))

    return f


def _squeeze(f):
    def g(pts):
        return f(pts)[..., 0]

    return g


@dataclass
class ManufacturedCase:
    """Exact fields and forcing of the manufactured ideal-gas solution.

    Every field is a callable on points ``(N, 2)``. Scalars return ``(N,)``,
    vectors ``(N, 2)``, symmetric tensors ``(N, 3)`` as ``(xx, xy, yy)``;
    per-species fields return an extra species axis.
    """

    D: np.ndarray
    eta: float
    zeta: float
    gamma_aug: float
    p_ref: float
    mu_ref: np.ndarray
    model: MaterialModel
    exact: dict = field(repr=False)
    c_mean: np.ndarray = None

    @property
    def n(self):
        return len(self.D)

    def boundary_data(self, mesh):
        gv, gi = self.exact["mass_flux"], self.exact["molar_flux"]
        return BoundaryData({t: gv for t in mesh.tags}, {t: gi for t in mesh.tags})

    def body_force(self, x):
        return self.exact["f"](x)

    def reaction(self, x):
        return self.exact["r"](x)


def mms_case(D=DEFAULT_D, g=None, eta=0.1, zeta=0.1, gamma_aug=0.1, RT=1.0):
    """Build the manufactured case for diffusion scales ``D`` and generator ``g``.

    ``g`` is a sympy expression in ``x`` and ``y`` (or a string sympy can
    parse); its derivatives are formed symbolically. Reference values are
    chosen so that the exact pressure and chemical potentials have zero mean.
    """
    D = np.asarray(D, dtype=float)
    if D.ndim != 1 or len(D) < 2 or np.any(D <= 0):
        raise InvalidArgumentError("need at least two positive diffusion scales")
    if g is None:
        g = default_g()
    elif isinstance(g, str):
        g = sympy.sympify(g, locals={"x": _x, "y": _y})
    if not isinstance(g, sympy.Expr):
        raise InvalidArgumentError("g must be a sympy expression in x and y")
    if not g.free_symbols <= {_x, _y}:
        raise InvalidArgumentError(f"g depends on unknown symbols {g.free_symbols - {_x, _y}}")
    n = len(D)
    Ds = [sympy.nsimplify(d) for d in D]
    grad = lambda e: [sympy.diff(e, _x), sympy.diff(e, _y)]  # noqa: E731
    gg = grad(g)
    lap = sympy.diff(g, _x, 2) + sympy.diff(g, _y, 2)
    c = [sympy.exp(g / d) for d in Ds]
    cT = sum(c)
    rho = cT  # unit molar masses
    omega = [ci / rho for ci in c]
    vs = [[d * gg[0], d * gg[1]] for d in Ds]
    v = [sum(omega[i] * vs[i][k] for i in range(n)) for k in range(2)]
    divv = sympy.diff(v[0], _x) + sympy.diff(v[1], _y)
    exy = (sympy.diff(v[0], _y) + sympy.diff(v[1], _x)) / 2
    lam = zeta - eta
    tau = [
        2 * eta * sympy.diff(v[0], _x) + lam * divv,
        2 * eta * exy,
        2 * eta * sympy.diff(v[1], _y) + lam * divv,
    ]
    divtau = [sympy.diff(tau[0], _x) + sympy.diff(tau[1], _y), sympy.diff(tau[1], _x) + sympy.diff(tau[2], _y)]

    cT_num = sympy.lambdify((_x, _y), RT * cT, "numpy")
    p_ref = _square_average(lambda P: cT_num(P[:, 0], P[:, 1]))
    g_num = sympy.lambdify((_x, _y), g, "numpy")
    g_mean = _square_average(lambda P: np.broadcast_to(g_num(P[:, 0], P[:, 1]), (len(P),)))
    # mu_i = RT ln(RT c_i / p_ref) + mu_ref_i has zero mean
    mu_ref = np.array([-RT * (math.log(RT / p_ref) + g_mean / d) for d in D])
    mu = [RT * (g / d - sympy.Float(g_mean) / d) for d in Ds]
    p = RT * cT - p_ref
    gp = grad(p)
    gmu = [grad(m) for m in mu]
    dforce = [[-c[i] * gmu[i][k] + omega[i] * gp[k] for k in range(2)] for i in range(n)]
    divsig = [divtau[k] - gp[k] for k in range(2)]
    f = [-divsig[k] / rho for k in range(2)]
    r = [c[i] * (gg[0] ** 2 + gg[1] ** 2 + Ds[i] * lap) for i in range(n)]

    exact = {
        "g": _squeeze(_vectorise([g])),
        "c": _vectorise(c),
        "mu": _vectorise(mu),
        "grad_mu": _vectorise([e for gm in gmu for e in gm]),
        "p": _squeeze(_vectorise([p])),
        "grad_p": _vectorise(gp),
        "tau": _vectorise(tau),
        "div_tau": _vectorise(divtau),
        "div_sigma": _vectorise(divsig),
        "vel": _vectorise([e for vi in vs for e in vi]),
        "v": _vectorise(v),
        "d": _vectorise([e for di in dforce for e in di]),
        "f": _vectorise(f),
        "r": _vectorise(r),
        "rho": _squeeze(_vectorise([rho])),
    }
    mom = _vectorise([rho * v[0], rho * v[1]])
    molar = _vectorise([c[i] * vs[i][k] for i in range(n) for k in range(2)])

    def mass_flux(x, nrm):
        return mom(x)

    def molar_flux(x, nrm):
        F = molar(x).reshape(len(x), n, 2)
        return np.einsum("bik,bk->bi", F, nrm)

    exact["mass_flux"] = mass_flux
    exact["molar_flux"] = molar_flux
    exact["symbolic"] = {"g": g, "c": c, "mu": mu, "p": p, "tau": tau, "v": v, "vel": vs, "f": f, "r": r}

    c_num = exact["c"]
    c_mean = np.array([_square_average(lambda P, i=i: c_num(P)[:, i]) for i in range(n)])
    Dmat = np.outer(D, D)
    model = MaterialModel(
        molar_mass=np.ones(n),
        diffusivity=Dmat,
        RT=RT,
        eta=eta,
        zeta=zeta,
        gamma_aug=gamma_aug,
        law=IdealGas(p_ref=p_ref, mu_ref=tuple(mu_ref)),
    )
    return ManufacturedCase(D, eta, zeta, gamma_aug, p_ref, mu_ref, model, exact, c_mean)


def strong_residual(case, points):
    """Residuals of the strong augmented system at ``points`` from the exact fields.

    Returns a dict of max-abs residuals: transport relations, species
    balance, momentum balance and the viscous law. All vanish for a
    consistent forcing derivation.
    """
    sym = case.exact["symbolic"]
    n = case.n
    model = case.model
    c, mu, p, tau, v, vs = sym["c"], sym["mu"], sym["p"], sym["tau"], sym["v"], sym["vel"]
    cT = sum(c)
    rho = sum(ci * m for ci, m in zip(c, model.molar_mass))
    omega = [ci * m / rho for ci, m in zip(c, model.molar_mass)]
    out = {}
    # transport: d_i = sum_j M_ij v_j + gamma omega_i (sum omega v - v)
    trans = []
    for i in range(n):
        for k in range(2):
            d = -c[i] * sympy.diff(mu[i], (_x, _y)[k]) + omega[i] * sympy.diff(p, (_x, _y)[k])
            Mv = 0
            for j in range(n):
                if j != i:
                    Mv += model.RT * c[i] * c[j] / (model.diffusivity[i, j] * cT) * (vs[i][k] - vs[j][k])
            aug = case.gamma_aug * omega[i] * (sum(omega[j] * vs[j][k] for j in range(n)) - v[k])
            trans.append(d - Mv - aug)
    bal = [sympy.diff(c[i] * vs[i][0], _x) + sympy.diff(c[i] * vs[i][1], _y) - sym["r"][i] for i in range(n)]
    divtau = [sympy.diff(tau[0], _x) + sympy.diff(tau[1], _y), sympy.diff(tau[1], _x) + sympy.diff(tau[2], _y)]
    mom = [divtau[k] - sympy.diff(p, (_x, _y)[k]) + rho * sym["f"][k] for k in range(2)]
    divv = sympy.diff(v[0], _x) + sympy.diff(v[1], _y)
    visc = [
        tau[0] - (2 * case.eta * sympy.diff(v[0], _x) + (case.zeta - case.eta) * divv),
        tau[1] - case.eta * (sympy.diff(v[0], _y) + sympy.diff(v[1], _x)),
    ]
    ideal = [c[i] - case.p_ref / model.RT * sympy.exp((mu[i] - case.mu_ref[i]) / model.RT) for i in range(n)]
    for name, exprs in (("transport", trans), ("species", bal), ("momentum", mom), ("viscous", visc),
                        ("constitutive", ideal)):
        out[name] = float(np.max(np.abs(_vectorise(exprs)(points))))
    return out


# ---------------------------------------------------------------- error norms


@dataclass
class ConvergenceRecord:
    """Errors of one mesh level. Per-species fields are lists."""

    h: float
    mu: list
    tau: float
    p: float
    p_h1: float
    vel: list
    v: float
    d: list
    div_sigma: float
    grad_mu: list
    grad_p: float
    div_tau: float
    defect: float
    iterations: int = 0

    def fields(self):
        """Flat ``{name: error}`` mapping over every error entry."""
        out = {}
        for k, val in asdict(self).items():
            if k in ("h", "iterations"):
                continue
            if isinstance(val, list):
                for i, e in enumerate(val, start=1):
                    out[f"{k}_{i}"] = e
            else:
                out[k] = val
        return out

    def row(self):
        return {"h": self.h, **self.fields(), "iterations": self.iterations}


def _l2(dx, diff):
    diff = np.asarray(diff)
    if diff.ndim == dx.ndim:
        return float(np.sqrt(np.sum(dx * diff**2)))
    return float(np.sqrt(np.sum(dx * np.sum(diff**2, axis=-1))))


def _tensor_l2(dx, diff):
    return float(np.sqrt(np.sum(dx * (diff[..., 0] ** 2 + 2 * diff[..., 1] ** 2 + diff[..., 2] ** 2))))


def error_norms(solution, case, state, iterations=0):
    """Errors of a discrete solution against the exact fields, degree-10 quadrature."""
    disc = solution.disc
    rule = quadrature(ERROR_DEGREE)
    n = case.n
    tab = disc.W.tabulate(rule)
    x, dx = tab.x, tab.dx
    ex = case.exact
    mu_h, gmu_h, d_h, vel_h = [], [], [], []
    mu_e = ex["mu"](x)
    gmu_e = ex["grad_mu"](x).reshape(x.shape[:2] + (n, 2))
    d_e = ex["d"](x).reshape(x.shape[:2] + (n, 2))
    vel_e = ex["vel"](x).reshape(x.shape[:2] + (n, 2))
    for i in range(n):
        val, grad = disc.X.evaluate(solution.mu(i), rule)
        mu_h.append(_l2(dx, val[..., 0] - mu_e[..., i]))
        gmu_h.append(_l2(dx, grad - gmu_e[..., i, :]))
        dcoef = discrete_driving_force(solution.mu(i), solution.p, state, i, disc)
        d_h.append(_l2(dx, disc.W.evaluate(dcoef, rule)[0] - d_e[..., i, :]))
        vel_h.append(_l2(dx, disc.W.evaluate(solution.vel(i), rule)[0] - vel_e[..., i, :]))
    tv, td = disc.S.evaluate(solution.tau, rule)
    pv, pg = disc.P.evaluate(solution.p, rule)
    ep = pv[..., 0] - ex["p"](x)
    egp = pg - ex["grad_p"](x)
    vv = disc.W.evaluate(solution.v, rule)[0]
    omega, _ = state.omega_at(disc.P.tabulate(rule).values)
    defect = vv.copy()
    for i in range(n):
        defect -= omega[..., i, None] * disc.W.evaluate(solution.vel(i), rule)[0]
    return ConvergenceRecord(
        h=disc.mesh.h,
        mu=mu_h,
        tau=_tensor_l2(dx, tv - ex["tau"](x)),
        p=_l2(dx, ep),
        p_h1=math.sqrt(_l2(dx, ep) ** 2 + _l2(dx, egp) ** 2),
        vel=vel_h,
        v=_l2(dx, vv - ex["v"](x)),
        d=d_h,
        div_sigma=_l2(dx, (td - pg) - ex["div_sigma"](x)),
        grad_mu=gmu_h,
        grad_p=_l2(dx, egp),
        div_tau=_l2(dx, td - ex["div_tau"](x)),
        defect=_l2(dx, defect),
        iterations=int(iterations),
    )


@dataclass
class RateTable:
    """Least-squares log-log slopes per field and monotonicity flags."""

    h: list
    errors: dict
    slopes: dict
    monotone: dict

    def rows(self):
        """``(h, field, error, slope)`` tuples, field-major."""
        out = []
        for name, errs in self.errors.items():
            for h, e in zip(self.h, errs):
                out.append((h, name, e, self.slopes[name]))
        return out


def fit_slope(h, err):
    """Least-squares slope of ``log err`` against ``log h``."""
    h = np.log(np.asarray(h, dtype=float))
    e = np.log(np.asarray(err, dtype=float))
    A = np.stack([h, np.ones_like(h)], axis=1)
    return float(np.linalg.lstsq(A, e, rcond=None)[0][0])


def rates(records: Sequence[ConvergenceRecord]):
    """Convergence slopes over a mesh sequence (at least three levels)."""
    if len(records) < 3:
        raise InvalidArgumentError(f"rates need at least 3 mesh levels, got {len(records)}")
    h = [r.h for r in records]
    if any(b >= a for a, b in zip(h, h[1:])):
        raise InvalidArgumentError("mesh sizes must be strictly decreasing")
    names = list(records[0].fields())
    errors = {k: [r.fields()[k] for r in records] for k in names}
    slopes, mono = {}, {}
    for k, errs in errors.items():
        if min(errs) <= 0:
            slopes[k] = float("nan")
        else:
            slopes[k] = fit_slope(h, errs)
        mono[k] = all(b <= a for a, b in zip(errs, errs[1:]))
    return RateTable(h, errors, slopes, mono)


def write_rates_csv(table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "field", "error", "slope"])
        for h, name, e, s in table.rows():
            w.writerow([repr(float(h)), name, repr(float(e)), repr(float(s))])


def write_records_csv(records, path):
    rows = [r.row() for r in records]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, float) else v for k, v in r.items()})


# ---------------------------------------------------------------- drivers


@dataclass
class MMSRun:
    record: ConvergenceRecord
    result: object
    disc: Discretization


def run_mms(n, family=1, case=None, tol=1e-7, relaxation=1.0, max_iter=50, diagonal="right"):
    """Solve the manufactured problem on ``unit_square_mesh(n)`` and measure errors."""
    case = mms_case() if case is None else case
    mesh = unit_square_mesh(n, diagonal=diagonal)
    disc = Discretization(mesh, case.n, family)
    opts = PicardOptions(tol=tol, relaxation=relaxation, max_iter=max_iter)
    res = picard(
        case.model,
        disc,
        case.boundary_data(mesh),
        body_force=case.body_force,
        reaction=case.reaction,
        init=case.c_mean,
        opts=opts,
    )
    rec = error_norms(res.solution, case, res.state, iterations=res.iterations)
    return MMSRun(rec, res, disc)


# ---------------------------------------------------------------- div surjectivity


def div_lift(mesh, u):
    """Minimum ``H(div)``-norm stress with ``div sigma = u`` for a DG1 vector ``u``.

    Solves the saddle-point problem of minimising ``|sigma|^2 + |div sigma|^2``
    subject to the divergence constraint tested against the DG1 vector space.
    Returns ``(sigma, residual, ratio)`` with the L2 residual of the constraint
    and ``|sigma|_{H(div)} / |u|``.
    """
    S = FunctionSpace(mesh, "AW")
    W = FunctionSpace(mesh, "DG1vec")
    rule = quadrature(8)
    ts, tw = S.tabulate(rule), W.tabulate(rule)
    wts = np.array([1.0, 2.0, 1.0])
    Ms = np.einsum("cq,cbqk,cdqk,k->cbd", ts.dx, ts.values, ts.values, wts)
    Ms += np.einsum("cq,cbqk,cdqk->cbd", ts.dx, ts.divs, ts.divs)
    Dv = np.einsum("cq,cbqk,cdqk->cbd", tw.dx, tw.values, ts.divs)
    Mw = np.einsum("cq,cbqk,cdqk->cbd", tw.dx, tw.values, tw.values)

    def scatter(rd, cd, loc, shape):
        r = np.broadcast_to(rd[:, :, None], loc.shape)
        c = np.broadcast_to(cd[:, None, :], loc.shape)
        return sp.coo_matrix((loc.ravel(), (r.ravel(), c.ravel())), shape=shape).tocsr()

    A = scatter(S.cell_dofs, S.cell_dofs, Ms, (S.dim, S.dim))
    B = scatter(W.cell_dofs, S.cell_dofs, Dv, (W.dim, S.dim))
    Mu = scatter(W.cell_dofs, W.cell_dofs, Mw, (W.dim, W.dim))
    K = sp.bmat([[A, B.T], [B, None]]).tocsc()
    rhs = np.concatenate([np.zeros(S.dim), Mu @ u])
    sol = spla.splu(K).solve(rhs)
    sigma = sol[: S.dim]
    # L2 residual of div sigma - u, both in the DG1 space
    du = spla.spsolve(Mu.tocsc(), B @ sigma) - u
    res = math.sqrt(float(du @ (Mu @ du)))
    unorm = math.sqrt(float(u @ (Mu @ u)))
    hdiv = math.sqrt(float(sigma @ (A @ sigma)))
    return sigma, res, hdiv / unorm
