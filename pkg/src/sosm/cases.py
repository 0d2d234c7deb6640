"""Benzene and cyclohexane mixing in a T junction.

Pure benzene (species 0) enters through the top arm and pure cyclohexane
(species 1) through the bottom arm with parabolic profiles; the inlet molar
fluxes are equal, which fixes the benzene speed from the cyclohexane speed.
The mixture leaves through a parabolic outlet profile that balances each
species separately.

The solve runs in scaled variables. Reference scales: length ``width``,
velocity ``v_cyclohexane``, pressure and stress ``p_ref``, chemical potential
``RT`` and concentration ``p_ref / RT``. With these scales the scaled
equations keep their dimensional form with ``RT = 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .assembly import BoundaryData, Discretization, boundary_points, evaluate_boundary_data
from .errors import InvalidArgumentError
from .mesh import JunctionGeometry, junction_mesh
from .solver import PicardOptions, picard, postprocess
from .thermo import MargulesBinary, MaterialModel

GAS_CONSTANT = 8.314462618
SPECIES = ("benzene", "cyclohexane")


@dataclass(frozen=True)
class MixingConfig:
    """Physical parameters in SI units; geometry lengths in metres.

    ``A12`` and ``A21`` are the Margules parameters and have no default.
    ``gamma_aug`` is dimensionless in the scaled equations.
    """

    A12: float
    A21: float
    D12: float = 2.1e-9
    eta: float = 6e-4
    zeta: float = 1e-7
    molar_mass: tuple = (0.078, 0.084)
    p_ref: float = 1e5
    c_ref: tuple = (11.23e3, 9.20e3)
    v_cyclohexane: float = 4e-6
    temperature: float = 298.15
    relaxation: float = 0.1
    gamma_aug: float = 0.1
    tol: float = 1e-6
    max_iter: int = 400
    width: float = 1e-3
    arm_length: float = 1e-3
    outlet_length: float = 3e-3
    h: float = 1e-4
    diagonal: str = "right"

    def __post_init__(self):
        positive = ("D12", "eta", "zeta", "p_ref", "temperature", "gamma_aug", "tol", "width",
                    "outlet_length", "h")
        for name in positive:
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise InvalidArgumentError(f"{name} must be positive, got {val!r}")
        if not (self.v_cyclohexane >= 0 and self.arm_length > 0):
            raise InvalidArgumentError("v_cyclohexane must be >= 0 and arm_length > 0")
        if not 0 < self.relaxation <= 1:
            raise InvalidArgumentError("relaxation must lie in (0, 1]")
        for name in ("molar_mass", "c_ref"):
            val = tuple(float(v) for v in getattr(self, name))
            if len(val) != 2 or min(val) <= 0:
                raise InvalidArgumentError(f"{name} needs two positive entries")
            object.__setattr__(self, name, val)

    @property
    def RT(self):
        return GAS_CONSTANT * self.temperature

    @property
    def v_benzene(self):
        """Benzene peak speed from equal inlet molar fluxes."""
        return self.c_ref[1] * self.v_cyclohexane / self.c_ref[0]


@dataclass(frozen=True)
class Scales:
    length: float
    velocity: float
    pressure: float
    potential: float
    concentration: float
    mass: float

    @property
    def molar_flux(self):
        return self.concentration * self.velocity


def reference_scales(config):
    U = config.v_cyclohexane if config.v_cyclohexane > 0 else 1.0
    return Scales(
        length=config.width,
        velocity=U,
        pressure=config.p_ref,
        potential=config.RT,
        concentration=config.p_ref / config.RT,
        mass=float(np.mean(config.molar_mass)),
    )


def scaled_model(config, scales=None):
    """:class:`MaterialModel` of the scaled equations."""
    s = reference_scales(config) if scales is None else scales
    stress = s.pressure * s.length / s.velocity  # viscosity scale
    D = config.D12 / (s.length * s.velocity)
    law = MargulesBinary(config.A12, config.A21, tuple(c / s.concentration for c in config.c_ref))
    return MaterialModel(
        molar_mass=tuple(m / s.mass for m in config.molar_mass),
        diffusivity=np.array([[1.0, D], [D, 1.0]]),
        RT=1.0,
        eta=config.eta / stress,
        zeta=config.zeta / stress,
        gamma_aug=config.gamma_aug,
        law=law,
    )


def geometry(config):
    """Junction geometry in scaled lengths."""
    W = config.width
    return JunctionGeometry(
        width=1.0, arm_length=config.arm_length / W, outlet_length=config.outlet_length / W,
        h=config.h / W, diagonal=config.diagonal)


def _parabola(s):
    return 4.0 * s * (1.0 - s)


def inlet_profiles(config, mesh, scales=None):
    """Scaled boundary data of the junction.

    Inlets carry pure-species parabolic molar fluxes with peak
    ``c_ref * speed``; the outlet carries a parabolic profile per species whose
    total equals that species' inflow; walls carry nothing. The mass flux is
    ``sum_i M_i g_i n`` everywhere, so flux compatibility holds pointwise.
    """
    s = reference_scales(config) if scales is None else scales
    for tag in ("inlet1", "inlet2", "outlet", "wall"):
        if tag not in mesh.tags:
            raise InvalidArgumentError(f"mesh has no boundary tag {tag!r}")
    M = np.asarray(config.molar_mass) / s.mass
    c = np.asarray(config.c_ref) / s.concentration
    speed = np.array([config.v_benzene, config.v_cyclohexane]) / s.velocity
    peak = c * speed  # scaled molar flux peaks
    y_lo, y_hi = -0.5, 0.5

    def molar(tag):
        def g(x, nrm):
            out = np.zeros((len(x), 2))
            if tag == "inlet1":
                out[:, 0] = -peak[0] * _parabola(np.clip(x[:, 0], 0.0, 1.0))
            elif tag == "inlet2":
                out[:, 1] = -peak[1] * _parabola(np.clip(x[:, 0], 0.0, 1.0))
            elif tag == "outlet":
                prof = _parabola(np.clip((x[:, 1] - y_lo) / (y_hi - y_lo), 0.0, 1.0))
                out[:] = prof[:, None] * peak[None, :]
            return out
        return g

    def mass(tag):
        gi = molar(tag)

        def gv(x, nrm):
            return (gi(x, nrm) @ M)[:, None] * nrm
        return gv

    tags = mesh.tags
    return BoundaryData({t: mass(t) for t in tags}, {t: molar(t) for t in tags})


def boundary_totals(data, mesh, n=2):
    """Integrated outward fluxes per tag: ``{tag: (mass, molar (n,))}``."""
    cells, bary, x, wts, normals = boundary_points(mesh)
    gv, gi = evaluate_boundary_data(data, mesh, x, normals, n)
    gvn = np.einsum("bqk,bk->bq", gv, normals)
    out = {}
    for tag in mesh.tags:
        sel = mesh.boundary_tags == tag
        out[tag] = (float(np.sum(wts[sel] * gvn[sel])), np.einsum("bq,bqi->i", wts[sel], gi[sel]))
    return out


def field_boundary_flux(solution, state, mesh, tag, n=2):
    """Outward molar flux ``int c_i v_i . n`` of the discrete fields over ``tag``."""
    cells, bary, x, wts, normals = boundary_points(mesh)
    sel = mesh.boundary_tags == tag
    cells, bary, wts, normals = cells[sel], bary[sel], wts[sel], normals[sel]
    W = solution.disc.W
    out = np.zeros(n)
    for i in range(n):
        vals, _, _ = W.basis_at(bary, cells=cells)  # (B, 6, np, 2)
        coef = np.asarray(solution.vel(i))[W.cell_dofs[cells]]
        vi = np.einsum("bd,bdqk->bqk", coef, vals)
        vn = np.einsum("bqk,bk->bq", vi, normals)
        out[i] = np.sum(wts * vn * state.cell_conc[cells, i][:, None])
    return out


def pressure_oscillation(p, mesh):
    """Fraction of interior vertices that are strict local extrema of ``p``."""
    V = mesh.num_vertices
    edges = mesh.edges
    lo = np.full(V, np.inf)
    hi = np.full(V, -np.inf)
    for a, b in ((0, 1), (1, 0)):
        np.minimum.at(lo, edges[:, a], p[edges[:, b]])
        np.maximum.at(hi, edges[:, a], p[edges[:, b]])
    interior = np.ones(V, dtype=bool)
    interior[mesh.edges[mesh.boundary_edges].ravel()] = False
    extreme = ((p > hi) | (p < lo)) & interior
    return float(extreme.sum() / max(1, interior.sum()))


@dataclass
class MixingResult:
    config: MixingConfig
    scales: Scales
    model: MaterialModel
    mesh: object
    result: object
    diagnostics: dict = field(default_factory=dict)

    @property
    def solution(self):
        return self.result.solution

    @property
    def state(self):
        return self.result.state


def mixing_diagnostics(config, mesh, data, result, model, scales):
    """Balance, defect and smoothness diagnostics of a converged mixing solve."""
    sol, state = result.solution, result.state
    totals = boundary_totals(data, mesh)
    inlet_molar = -(totals["inlet1"][1] + totals["inlet2"][1])
    inlet_mass = -(totals["inlet1"][0] + totals["inlet2"][0])
    net_mass = sum(v[0] for v in totals.values())
    net_molar = sum(v[1] for v in totals.values())
    area = float(mesh.cell_areas().sum())
    lam = sol.multipliers
    post = postprocess(sol, model, state)
    p = np.asarray(sol.p)
    in_field = -(field_boundary_flux(sol, state, mesh, "inlet1") + field_boundary_flux(sol, state, mesh, "inlet2"))
    out_field = field_boundary_flux(sol, state, mesh, "outlet")
    scale_molar = np.maximum(np.abs(inlet_molar).max(), 1e-300)
    defect_max = float(np.sqrt((post["defect"] ** 2).sum(axis=-1)).max())
    return {
        "iterations": result.iterations,
        "benzene_inlet_speed": config.v_benzene,
        "inlet_mass_flux": inlet_mass,
        "net_mass_flux_relative": abs(net_mass) / max(abs(inlet_mass), 1e-300),
        "species_balance_relative": np.abs(net_molar) / scale_molar,
        "species_multiplier_balance": np.abs(lam[:2]) * area / scale_molar,
        "field_inflow": in_field,
        "field_outflow": out_field,
        "defect_norm": post["defect_norm"],
        "defect_max": defect_max,
        "gibbs_duhem": post["gibbs_duhem"],
        "pressure_finite": bool(np.all(np.isfinite(p))),
        "pressure_oscillation": pressure_oscillation(p, mesh),
        "pressure_change_pa": (float(p.min() * scales.pressure), float(p.max() * scales.pressure)),
        "min_mole_fraction": float((state.cell_conc / state.cell_conc.sum(axis=1, keepdims=True)).min()),
    }


def initial_concentration(config, scales):
    """Equimolar mixture at the total concentration of the equation of state."""
    c1, c2 = (c / scales.concentration for c in config.c_ref)
    cT = c1 * c2 / (0.5 * c2 + 0.5 * c1)
    return np.array([0.5 * cT, 0.5 * cT])


def run_mixing(config, callback=None, max_iter=None):
    """Solve the mixing case; returns a :class:`MixingResult` in scaled units.

    Raises :class:`NonConvergenceError` carrying the Picard history.
    """
    scales = reference_scales(config)
    model = scaled_model(config, scales)
    mesh = junction_mesh(geometry(config))
    disc = Discretization(mesh, 2, family=1)
    data = inlet_profiles(config, mesh, scales)
    opts = PicardOptions(tol=config.tol, relaxation=config.relaxation,
                         max_iter=config.max_iter if max_iter is None else max_iter)
    res = picard(model, disc, data, init=initial_concentration(config, scales), opts=opts, callback=callback)
    out = MixingResult(config, scales, model, mesh, res)
    out.diagnostics = mixing_diagnostics(config, mesh, data, res, model, scales)
    return out


def config_fields():
    return {f.name: f for f in fields(MixingConfig)}


__all__ = [
    "MixingConfig", "Scales", "reference_scales", "scaled_model", "geometry", "inlet_profiles",
    "boundary_totals", "field_boundary_flux", "pressure_oscillation", "MixingResult",
    "mixing_diagnostics", "run_mixing", "config_fields",
]
