"""
Manufactured-solution convergence study
=======================================

Solves the ternary manufactured problem on a sequence of uniform meshes with
both element families and prints observed convergence rates. Pass a family
and mesh levels on the command line, e.g. ``python demos/mms_convergence.py 2 4 8 16``.
The same study is available as ``sosm mms``.
"""
# %%
import sys
import time

from sosm.verify import mms_case, rates, run_mms

family = int(sys.argv[1]) if len(sys.argv) > 1 else 1
levels = [int(a) for a in sys.argv[2:]] or [4, 8, 16]

# %%
# The exact solution has species velocities D_i grad g and concentrations
# exp(g / D_i); every forcing term is derived symbolically.
case = mms_case()
print("diffusivity factors:", list(case.D))

# %%
# One Picard solve per mesh. Each record holds the L2 errors of every field.
records = []
for n in levels:
    start = time.perf_counter()
    run = run_mms(n, family=family, case=case)
    records.append(run.record)
    print(f"n = {n:3d}: {run.record.iterations} Picard iterations, {time.perf_counter() - start:5.1f} s")

# %%
# Least-squares slopes of log(error) against log(h). Potentials, pressure and
# stress converge at second order. Velocities and driving forces converge at
# first order with the first family and at second order with the second.
table = rates(records)
for name, slope in table.slopes.items():
    print(f"{name:>10s}  {slope:6.3f}{'' if table.monotone[name] else '  (not monotone)'}")
