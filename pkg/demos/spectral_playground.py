"""
Grids, quadrature, and spectral transforms
==========================================

Round trips between grid samples and basis coefficients, the trapezoid
rule on periodic integrands, and what happens when the aliasing guard
M >= 8N is ignored.
"""

import numpy as np

from injop import (
    AliasingGuardError,
    BasisSpec,
    Grid,
    GridFunction,
    from_spectral,
    to_spectral,
)

grid = Grid(0.0, 1.0, 512)
basis = BasisSpec("fourier", (0.0, 1.0))

print("== quadrature sanity ==")
print("sum of weights        :", grid.weights.sum(), "(interval length 1)")
f = GridFunction(grid, np.cos(2 * np.pi * grid.nodes) ** 2)
print("integral of cos^2(2pi x):", float(grid.weights @ f.values[0]), "(exact: 0.5)")

# The trapezoid rule is spectrally accurate for periodic integrands, so
# the basis Gram matrix under this quadrature is the identity to near
# machine precision as long as M >= 8N.
n = 16
phi = basis.eval_modes(grid.nodes, n)
gram = (phi * grid.weights) @ phi.T
print("gram defect (n=16)    :", np.max(np.abs(gram - np.eye(n))))

print()
print("== band-limited round trip ==")
rng = np.random.default_rng(0)
coeffs = rng.standard_normal((1, n))
u = from_spectral(to_spectral(GridFunction(grid, coeffs[0] @ phi), basis, n), grid)
print("max error             :", np.max(np.abs(u.values[0] - coeffs[0] @ phi)))

print()
print("== the aliasing guard ==")
try:
    to_spectral(GridFunction(Grid(0.0, 1.0, 63), np.zeros(63)), basis, 8)
except AliasingGuardError as exc:
    print("M=63 with n=8 is refused:", exc)

# Undersampling without the guard would fold high frequencies onto low
# ones.  Mode 2 at frequency 1 sampled on 9 nodes looks identical to
# frequency 8 content, which is the classic picket-fence effect.
coarse = Grid(0.0, 1.0, 9)
high = np.sqrt(2) * np.cos(2 * np.pi * 8 * coarse.nodes)
low = np.sqrt(2) * np.cos(2 * np.pi * 0 * coarse.nodes)
print("freq-8 cosine on 9 nodes vs constant:", np.max(np.abs(high - low)))

print()
print("== step functions ==")
steps = BasisSpec("step_haar", (0.0, 1.0))
sgrid = Grid(0.0, 1.0, 513)
sphi = steps.eval_modes(sgrid.nodes, 6)
sgram = (sphi * sgrid.weights) @ sphi.T
print("step gram defect (n=6, M=513):", np.max(np.abs(sgram - np.eye(6))))
print("supports are nested dyadic intervals; mode k lives on [2^-k, 2^-k+1):")
for k in range(3):
    support = sgrid.nodes[np.abs(sphi[k]) > 0]
    print(f"  mode {k + 1}: [{support.min():.4f}, {support.max():.4f}]")
