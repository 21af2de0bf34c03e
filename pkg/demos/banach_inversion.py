"""Fixed-point inversion of a contractive integral layer."""

import numpy as np

from injop import (
    DivergenceError,
    Grid,
    GridFunction,
    LinearTableKernel,
    NonlinearIntegralOperator,
    SigmoidSumKernel,
    estimate_contraction,
    invert_banach,
)

grid = Grid(0.0, 1.0, 512)
kern = SigmoidSumKernel([(0.35, 1.2, 0.0)], signature="u(y)")
op = NonlinearIntegralOperator(grid, kern, w=1.0)

rho = estimate_contraction(op)
print("sampled contraction factor:", rho)

u_true = GridFunction(grid, np.sin(2 * np.pi * grid.nodes) + 0.3)
z = op.apply(u_true)
u, trace = invert_banach(op, z, tol=1e-10, max_iter=80)

print("converged:", trace.converged, "in", trace.iterations, "iterations")
print("recovery error:", np.max(np.abs(u.values - u_true.values)))
print()
print("iter   residual_L2     ratio")
for i, r_l2, r_h1, ratio in trace.rows():
    print(f"{i:4d}   {r_l2:.3e}    {'' if ratio is None else f'{ratio:.4f}'}")

# Push the gain past 1 and the same iteration runs away; the solver
# notices after a patience window of growing residuals and raises with
# the trace attached instead of spinning to max_iter.
print()
bad = NonlinearIntegralOperator(grid, LinearTableKernel(3.0), w=1.0)
try:
    invert_banach(bad, GridFunction(grid, np.ones(grid.size)), max_iter=200)
except DivergenceError as exc:
    t = exc.trace
    print("divergence flagged after", t.iterations, "iterations")
    print("last residuals:", ["%.2e" % r for r in t.residuals_l2[-3:]])
