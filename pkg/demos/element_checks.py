"""
Element and quadrature checks
=============================

Builds the Arnold-Winther stress basis on a few triangles and confirms the
properties the solver relies on: nodal (Kronecker) basis, linear divergence,
continuous normal traction across a shared edge, and exact quadrature.

Run with ``python demos/element_checks.py``.
"""
# %%
# Quadrature: the degree-k rule integrates every monomial of degree <= k.
# The integral of x^a y^b over the reference triangle is a! b! / (a + b + 2)!.
import math

import numpy as np

from sosm.fe import FunctionSpace, aw_local_basis
from sosm.mesh import build_mesh
from sosm.quadrature import quadrature

for degree in (2, 5, 10):
    rule = quadrature(degree)
    err = max(
        abs(rule.weights @ (rule.points[:, 1] ** a * rule.points[:, 2] ** b)
            - math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2))
        for a in range(degree + 1) for b in range(degree + 1 - a)
    )
    print(f"degree {degree:2d}: {len(rule.weights):3d} points, worst monomial error {err:.1e}")

# %%
# A stretched triangle and its 24 basis functions. Evaluating the basis at
# the vertices returns identity blocks for the vertex degrees of freedom.
verts = np.array([[0.1, 0.0], [2.0, 0.3], [0.4, 0.7]])
basis = aw_local_basis(verts)
val, div = basis.evaluate(verts[None])
vertex_block = val[0, :9, :, :].transpose(1, 2, 0).reshape(9, 9)
print("vertex functionals form the identity:", np.allclose(vertex_block, np.eye(9), atol=1e-10))

# %%
# The divergence of every basis function is affine: fitting a plane to its
# values at random points leaves no residual.
rng = np.random.default_rng(0)
bary = rng.dirichlet(np.ones(3), size=15)
x = bary @ verts
_, div = basis.evaluate(x[None])
A = np.column_stack([np.ones(len(x)), x])
worst = 0.0
for b in range(24):
    coef, *_ = np.linalg.lstsq(A, div[0, b], rcond=None)
    worst = max(worst, np.abs(A @ coef - div[0, b]).max())
print(f"largest deviation of a divergence from a plane: {worst:.1e}")

# %%
# Two cells sharing an edge: a random global stress field has the same
# normal traction seen from either side.
mesh = build_mesh([[0, 0], [1, 0.2], [0.3, 1.1], [1.4, 1.3]], [[0, 1, 2], [1, 3, 2]])
S = FunctionSpace(mesh, "AW")
coeffs = rng.standard_normal(S.dim)
e = int(np.flatnonzero(mesh.edge_cells[:, 1] >= 0)[0])
a, b = mesh.edges[e]
n = mesh.edge_normals()[e]
t = np.linspace(0.1, 0.9, 5)
tractions = []
for c in mesh.edge_cells[e]:
    local = np.zeros((len(t), 3))
    cell = mesh.cells[c].tolist()
    local[:, cell.index(a)], local[:, cell.index(b)] = 1 - t, t
    sig = S.evaluate_at(coeffs, [c], local[None])[0][0]
    tractions.append(np.stack([sig[:, 0] * n[0] + sig[:, 1] * n[1], sig[:, 1] * n[0] + sig[:, 2] * n[1]], 1))
print(f"traction jump across the shared edge: {np.abs(tractions[0] - tractions[1]).max():.1e}")
