"""A chart-by-chart inverse for a non-contractive integral layer.

When the fixed-point gain exceeds 1 globally, inversion still works
locally around anchor points whose linearizations are factorized once
and reused.  Targets are routed to an anchor through probe-node cells,
and each cell's Newton iteration owns a certified neighborhood.
"""

import numpy as np

from injop import (
    Grid,
    GridFunction,
    NonlinearIntegralOperator,
    SigmoidSumKernel,
    build_atlas,
    cell_key,
    global_invert,
    local_invert,
)

grid = Grid(0.0, 1.0, 257)
op = NonlinearIntegralOperator(
    grid, SigmoidSumKernel([(0.4, 1.0, 0.0)], signature="u(y)"), w=1.0
)

# Anchors are training inputs; their images define the cells.
anchors = [
    GridFunction(grid, np.zeros(grid.size)),
    GridFunction(grid, np.full(grid.size, 1.0)),
    GridFunction(grid, 2.0 + 0.5 * np.sin(2 * np.pi * grid.nodes)),
]
atlas = build_atlas(op, anchors, ell0=3, eps1=0.25)

print("anchors:", len(atlas.anchors), " cells:", len(atlas.cell_map))
print("probe nodes at x =", grid.nodes[atlas.probe_idx])
for key, j in sorted(atlas.cell_map.items()):
    print("  cell", key, "-> anchor", j)
print("constants:", {k: round(v, 6) for k, v in atlas.constants.items()})

print()
print("-- local inversion near an anchor --")
rng = np.random.default_rng(5)
u_true = GridFunction(grid, anchors[1].values[0]
                      + 0.05 * np.cos(2 * np.pi * grid.nodes))
g = op.apply(u_true)
u, trace = local_invert(op, atlas.anchors[1], g, tol=1e-10)
print("converged in", trace.iterations, "iterations;",
      "error:", np.max(np.abs(u.values - u_true.values)))
print("step ratios:", ["%.2e" % r for r in trace.ratios])

print()
print("-- routing through cells --")
for label, shift in (("near anchor 0", 0.0), ("near anchor 2", 2.0)):
    target_in = GridFunction(grid, np.full(grid.size, shift)
                             + 0.03 * rng.standard_normal()
                             * np.sin(2 * np.pi * grid.nodes))
    g = op.apply(target_in)
    key = cell_key(g, atlas.probe_idx, atlas.eps1)
    u, trace = global_invert(atlas, op, g, tol=1e-10)
    print(f"{label}: cell {key} -> anchor {trace.meta['anchor']},"
          f" fallback={trace.meta['fallback']},"
          f" error {np.max(np.abs(u.values - target_in.values)):.2e}")

# A target outside every seen cell falls back to the nearest anchor
# image, which still converges when the target is within reach.
far = op.apply(GridFunction(grid, np.full(grid.size, 1.6)))
u, trace = global_invert(atlas, op, far, tol=1e-10, max_iter=120)
print("unseen cell:", cell_key(far, atlas.probe_idx, atlas.eps1),
      "fallback =", trace.meta["fallback"], ", converged =", trace.converged)
