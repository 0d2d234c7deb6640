"""Thermodynamic relations for an isothermal multicomponent mixture.

Concentration-level algebra (density, mass and mole fractions), the
Onsager-Stefan-Maxwell transport matrix and its augmentation, and the
constitutive laws that recover concentrations from chemical potentials.

Functions operate pointwise and are vectorised over leading axes: a
concentration argument of shape ``(..., n)`` yields a matrix of shape
``(..., n, n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, InvalidArgumentError, NonConvergenceError


@dataclass(frozen=True)
class IdealGas:
    """``c_i = p_ref / RT * exp((mu_i - mu_ref_i) / RT)``, independent of pressure."""

    p_ref: float
    mu_ref: Sequence[float]


@dataclass(frozen=True)
class MargulesBinary:
    """Two-parameter Margules activity model.

    The total concentration follows ``c_T = c1 c2 / (x1 c2 + x2 c1)``, built
    from the pure-species reference concentrations ``c_ref``.
    """

    A12: float
    A21: float
    c_ref: Sequence[float]
    mu_ref: Sequence[float] = (0.0, 0.0)


@dataclass(frozen=True)
class MaterialModel:
    """Material parameters of an ``n``-species mixture (consistent units).

    ``diffusivity`` is the symmetric matrix of Stefan-Maxwell diffusivities
    (diagonal ignored). ``gamma_aug`` is the augmentation parameter.
    """

    molar_mass: Sequence[float]
    diffusivity: np.ndarray
    RT: float
    eta: float
    zeta: float
    gamma_aug: float
    law: IdealGas | MargulesBinary
    n: int = field(init=False)

    def __post_init__(self):
        M = np.asarray(self.molar_mass, dtype=float)
        D = np.asarray(self.diffusivity, dtype=float)
        n = len(M)
        object.__setattr__(self, "molar_mass", M)
        object.__setattr__(self, "diffusivity", D)
        object.__setattr__(self, "n", n)
        if n < 2:
            raise InvalidArgumentError("a mixture needs at least two species")
        if D.shape != (n, n):
            raise InvalidArgumentError(f"diffusivity must be {n}x{n}")
        off = ~np.eye(n, dtype=bool)
        if np.any(D[off] <= 0) or not np.allclose(D, D.T, rtol=0, atol=0):
            raise InvalidArgumentError("diffusivities must be symmetric and positive")
        if np.any(M <= 0):
            raise InvalidArgumentError("molar masses must be positive")
        for name in ("RT", "eta", "zeta", "gamma_aug"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if isinstance(self.law, MargulesBinary) and n != 2:
            raise InvalidArgumentError("the Margules model is binary only")
        if len(self.law.mu_ref) != n:
            raise InvalidArgumentError("mu_ref needs one entry per species")


@dataclass(frozen=True)
class LocalState:
    """Pointwise mixture state; all arrays share leading shape ``(...)``."""

    c: np.ndarray  # (..., n) concentrations
    c_total: np.ndarray
    x: np.ndarray  # mole fractions
    omega: np.ndarray  # mass fractions
    rho: np.ndarray


def local_state(c, molar_mass):
    c = np.asarray(c, dtype=float)
    M = np.asarray(molar_mass, dtype=float)
    c_total = c.sum(axis=-1)
    rho = c @ M
    return LocalState(
        c=c,
        c_total=c_total,
        x=c / c_total[..., None],
        omega=c * M / rho[..., None],
        rho=rho,
    )


def density(c, molar_mass):
    return np.asarray(c) @ np.asarray(molar_mass, dtype=float)


def mass_fractions(c, molar_mass):
    c = np.asarray(c, dtype=float)
    M = np.asarray(molar_mass, dtype=float)
    return c * M / (c @ M)[..., None]


def transport_matrix(c, diffusivity, RT):
    """Onsager transport matrix of the Stefan-Maxwell equations.

    ``M_ij = -RT c_i c_j / (D_ij c_T)`` off the diagonal; each diagonal entry
    makes its row sum to zero.
    """
    c = np.asarray(c, dtype=float)
    if np.any(~(c > 0)):
        raise DomainError("concentrations must be strictly positive")
    D = np.asarray(diffusivity, dtype=float)
    n = c.shape[-1]
    off = ~np.eye(n, dtype=bool)
    invD = np.zeros_like(D)
    invD[off] = 1.0 / D[off]
    invD = 0.5 * (invD + invD.T)
    cT = c.sum(axis=-1)
    # form c_i c_j first so the product is bitwise symmetric
    K = (c[..., :, None] * c[..., None, :]) * (RT * invD) / cT[..., None, None]
    M = -K
    idx = np.arange(n)
    M[..., idx, idx] = K.sum(axis=-1)
    return M


def augment(M, omega, gamma_aug):
    """``M + gamma * omega omega^T``; positive definite for ``gamma > 0``."""
    if not gamma_aug > 0:
        raise DomainError("the augmentation parameter must be positive")
    omega = np.asarray(omega, dtype=float)
    return M + gamma_aug * omega[..., :, None] * omega[..., None, :]


def margules_log_activity(x1, A12, A21):
    """Log activity coefficients ``(ln g1, ln g2)`` of the two-parameter Margules model."""
    x1 = np.asarray(x1, dtype=float)
    x2 = 1.0 - x1
    ln_g1 = x2**2 * (A12 + 2.0 * (A21 - A12) * x1)
    ln_g2 = x1**2 * (A21 + 2.0 * (A12 - A21) * x2)
    return ln_g1, ln_g2


def margules_chemical_potential(x1, law, RT):
    """Chemical potentials ``(..., 2)`` of a binary with mole fraction ``x1``."""
    x1 = np.asarray(x1, dtype=float)
    lg1, lg2 = margules_log_activity(x1, law.A12, law.A21)
    mu1 = law.mu_ref[0] + RT * (lg1 + np.log(x1))
    mu2 = law.mu_ref[1] + RT * (lg2 + np.log1p(-x1))
    return np.stack([mu1, mu2], axis=-1)


def margules_total_concentration(x1, c_ref):
    c1, c2 = c_ref
    x1 = np.asarray(x1, dtype=float)
    return c1 * c2 / (x1 * c2 + (1.0 - x1) * c1)


def invert_margules(mu, law, RT, tol=1e-13, max_iter=50):
    """Mole fraction ``x1`` of a binary from its exchange potential ``mu1 - mu2``.

    The two potentials overdetermine one mole fraction; only their difference
    carries composition once each potential is known up to an additive gauge.
    Solves ``(mu1 - mu2 - mu_ref1 + mu_ref2) / RT = z + ln(g1 / g2)`` for the
    logit ``z = ln(x1 / x2)`` by Newton's method, safeguarded by bisection on a
    bracket so non-monotone (phase-splitting) parameters still terminate.
    """
    mu = np.asarray(mu, dtype=float)
    ref = np.asarray(law.mu_ref, dtype=float)
    target = ((mu[..., 0] - ref[0]) - (mu[..., 1] - ref[1])) / RT
    A12, A21 = law.A12, law.A21

    def f(z):
        x1 = 0.5 * (1.0 + np.tanh(0.5 * z))
        x2 = 0.5 * (1.0 - np.tanh(0.5 * z))
        lg1, lg2 = margules_log_activity(x1, A12, A21)
        dlg1 = -2 * x2 * (A12 + 2 * (A21 - A12) * x1) + x2**2 * 2 * (A21 - A12)
        dlg2 = 2 * x1 * (A21 + 2 * (A12 - A21) * x2) - x1**2 * 2 * (A12 - A21)
        return z + lg1 - lg2 - target, 1.0 + (dlg1 - dlg2) * x1 * x2

    # |ln(g1/g2)| <= 3(|A12| + |A21|), which brackets the root
    span = 3.0 * (abs(A12) + abs(A21)) + 1.0
    lo = target - span
    hi = target + span
    z = np.array(target, dtype=float)
    r = f(z)[0]
    for _ in range(max_iter):
        r, dr = f(z)
        lo = np.where(r < 0, z, lo)
        hi = np.where(r > 0, z, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = z - r / dr
        inside = np.isfinite(newton) & (newton >= lo) & (newton <= hi)
        z_new = np.where(inside, newton, 0.5 * (lo + hi))
        done = np.abs(z_new - z) <= tol * np.maximum(1.0, np.abs(z))
        z = z_new
        if np.all(done):
            break
    else:
        raise NonConvergenceError(
            f"Margules inversion did not converge in {max_iter} iterations",
            residual=float(np.max(np.abs(r))),
        )
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def concentrations_from_state(mu, p, model):
    """Recover the pointwise :class:`LocalState` from chemical potentials and pressure.

    ``mu`` has shape ``(..., n)``; ``p`` broadcasts against ``mu[..., 0]``. The
    shipped laws do not depend on ``p``.
    """
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(p)):
        raise DomainError("non-finite chemical potential or pressure")
    law = model.law
    RT = model.RT
    if isinstance(law, IdealGas):
        c = (law.p_ref / RT) * np.exp((mu - np.asarray(law.mu_ref, dtype=float)) / RT)
    elif isinstance(law, MargulesBinary):
        x1 = invert_margules(mu, law, RT)
        cT = margules_total_concentration(x1, law.c_ref)
        c = np.stack([x1 * cT, (1.0 - x1) * cT], axis=-1)
    else:
        raise InvalidArgumentError(f"unsupported constitutive law {law!r}")
    if not np.all(np.isfinite(c)):
        raise DomainError("constitutive law produced non-finite concentrations")
    return local_state(c, model.molar_mass)


def chemical_potential(c, model):
    """Forward constitutive law: chemical potentials of concentrations ``c``."""
    c = np.asarray(c, dtype=float)
    law = model.law
    if isinstance(law, IdealGas):
        return np.asarray(law.mu_ref) + model.RT * np.log(c * model.RT / law.p_ref)
    x1 = c[..., 0] / c.sum(axis=-1)
    return margules_chemical_potential(x1, law, model.RT)


def gibbs_duhem_residual(driving_forces, dx):
    """L2 norm of ``sum_i d_i`` from quadrature-point values.

    ``driving_forces`` has shape ``(..., nq, n, 2)`` and ``dx`` the matching
    quadrature weights ``(..., nq)``. Diagnostic only: the discrete scheme does
    not enforce the relation exactly.
    """
    s = np.asarray(driving_forces, dtype=float).sum(axis=-2)
    return float(np.sqrt(np.sum(np.asarray(dx) * np.sum(s * s, axis=-1))))
