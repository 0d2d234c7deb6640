"""
Transport matrix and constitutive laws
======================================

The Stefan-Maxwell transport matrix of a ternary mixture, the effect of the
augmentation on its spectrum, and the Margules activity model used by the
benzene-cyclohexane case.

Run with ``python demos/transport_and_thermodynamics.py``.
"""
# %%
import numpy as np

from sosm.thermo import (MargulesBinary, augment, invert_margules, margules_chemical_potential,
                         margules_total_concentration, transport_matrix)

c = np.array([1.0, 2.0, 0.5])
D = np.array([[1.0, 0.6, 1.2], [0.6, 1.0, 0.9], [1.2, 0.9, 1.0]])
M = transport_matrix(c, D, RT=1.0)
print("transport matrix:\n", M)
print("row sums:", M.sum(axis=1))
print("eigenvalues:", np.linalg.eigvalsh(M))

# %%
# The common velocity (all species moving together) is the null vector of M.
# Adding gamma * omega omega^T lifts that eigenvalue to a positive one.
omega = c / c.sum()
for gamma in (0.01, 0.1, 1.0):
    print(f"gamma = {gamma:5.2f}: smallest eigenvalue {np.linalg.eigvalsh(augment(M, omega, gamma))[0]:.4f}")

# %%
# Margules binary: chemical potential difference against composition, and
# the inversion used when recovering concentrations from potentials.
law = MargulesBinary(A12=0.4, A21=0.6, c_ref=(11.23e3, 9.20e3))
RT = 8.314462618 * 298.15
x1 = np.linspace(0.05, 0.95, 7)
mu = margules_chemical_potential(x1, law, RT)
back = invert_margules(mu, law, RT)
for xi, dm, xb, cT in zip(x1, mu[:, 0] - mu[:, 1], back, margules_total_concentration(x1, law.c_ref)):
    print(f"x1 = {xi:.2f}  mu1 - mu2 = {dm:9.1f} J/mol  recovered x1 = {xb:.12f}  c_T = {cT:7.1f} mol/m^3")
