"""Turning a lossy network into an injective one.

A two-layer ReLU network that genuinely merges inputs is augmented with
extra channels that carry a faithful copy of the input through the
network.  The lifted map stays close to the original on the shared
output block and separates every probed pair of inputs.
"""

import numpy as np

from injop import (
    Activation,
    BasisSpec,
    FiniteRankLayer,
    FiniteRankNetwork,
    Grid,
    SpectralCoeffs,
    lift_to_injective,
    zero_bias,
)

basis = BasisSpec("fourier", (0.0, 1.0))
grid = Grid(0.0, 1.0, 512)
rng = np.random.default_rng(3)
n = 2

hidden = FiniteRankLayer(1, 2, n, rng.standard_normal((n, n, 2, 1)),
                         SpectralCoeffs(basis, n, rng.standard_normal((2, n))),
                         activation=Activation("relu"))
final = FiniteRankLayer(2, 1, n, rng.standard_normal((n, n, 1, 2)),
                        zero_bias(basis, 1, n))
net = FiniteRankNetwork([hidden, final])

res = lift_to_injective(net, mode="relu", alpha=0.1)
print("original output modes:", n)
print("lifted output modes  :", res.n_total)
print("tilt eps0            :", res.eps0)

# Exact recovery: the augmented network's pathway channels carry the
# input itself through the ReLU mirror trick, so a left inverse exists
# by construction.
errs = []
for t in range(50):
    r = np.random.default_rng([3, t])
    a = SpectralCoeffs(basis, n, r.standard_normal((1, n)))
    rec = res.recover_input(res.apply_augmented(a, grid), grid)
    errs.append(np.max(np.abs(rec.coeffs - a.coeffs)))
print("max recovery error over 50 inputs:", max(errs))

# Closeness: on the first n output modes the lifted map deviates from
# the original by at most 5 eps0 times the augmented-path norm.
worst = 0.0
for t in range(50):
    r = np.random.default_rng([30, t])
    a = SpectralCoeffs(basis, n, r.standard_normal((1, n)))
    a = SpectralCoeffs(basis, n, a.coeffs / max(1.0, np.linalg.norm(a.coeffs)))
    f_out = res.apply_original(a, grid)
    g_out = res.apply(a, grid)
    h_out = res.apply_augmented(a, grid)
    gap = np.sqrt(np.sum((g_out.coeffs[:, :n] - f_out.coeffs) ** 2)
                  + np.sum(g_out.coeffs[:, n:] ** 2))
    bound = 5 * res.eps0 * h_out.l2_norm() + 1e-8
    worst = max(worst, gap / bound)
print("worst gap / bound ratio          :", worst, "(must stay <= 1)")

# Separation: distinct inputs keep distinct images.
r = np.random.default_rng(99)
pts = [SpectralCoeffs(basis, n, r.standard_normal((1, n))) for _ in range(60)]
imgs = [res.apply(a, grid).coeffs.ravel() for a in pts]
ratios = []
for i in range(len(pts)):
    for j in range(i + 1, len(pts)):
        di = np.linalg.norm(pts[i].coeffs - pts[j].coeffs)
        do = np.linalg.norm(imgs[i] - imgs[j])
        ratios.append(do / di)
print("min output/input gap over %d pairs: %.6f" % (len(ratios), min(ratios)))
