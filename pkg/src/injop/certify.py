"""Layerwise injectivity certification.

Two routes, matching the two activation regimes:

* injective activations: the layer is injective iff its coefficient block
  matrix is, which the singular values decide;
* ReLU: a falsifier that hunts for collision witnesses by sampling inputs,
  reading off which output channels stay strictly positive, and testing
  kernel directions of the row-restricted block matrix against the
  pointwise sign conditions a collision direction must satisfy.

A reported witness is always re-verified by evaluating the layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from .errors import DegenerateWitnessError
from .finite_rank import (
    FiniteRankLayer,
    apply_affine,
    apply_finite_rank,
    apply_layer,
    block_matrix,
    unstack_coeffs,
)
from .funcspace import Grid, SpectralCoeffs, from_spectral

#: Relative singular-value threshold for "injective on the span".
SINGULAR_TOL = 1e-10

#: Strict-positivity margin used when deciding the active channel set.
ACTIVE_MARGIN = 1e-12

#: Pointwise tolerance for the collision-direction sign conditions.
POINTWISE_TOL = 1e-10

VERDICT_CERTIFIED = "CertifiedInjective"
VERDICT_COUNTEREXAMPLE = "CounterexampleFound"
VERDICT_NO_COUNTEREXAMPLE = "NoCounterexampleFound"

#: Scalings tried on each kernel direction, 1 first, then outward by octave.
_SCALES = [
    sign * 2.0**j
    for j in list(range(0, 9)) + list(range(-1, -9, -1))
    for sign in (1.0, -1.0)
]


@dataclass
class CertReport:
    """Outcome of a certification run."""

    verdict: str
    sigma_min: float
    sigma_max: float
    trials: int
    seed: Optional[int] = None
    witness: Optional[Tuple[SpectralCoeffs, SpectralCoeffs]] = None
    bijective_on_span: bool = False

    def __post_init__(self):
        if self.verdict == VERDICT_COUNTEREXAMPLE and self.witness is None:
            raise ValueError("counterexample verdict requires a witness")


def verify_collision(
    layer: FiniteRankLayer, v1: SpectralCoeffs, v2: SpectralCoeffs, grid: Grid
) -> float:
    """L2 distance between the layer outputs of a claimed witness pair.

    Raises if the pair is degenerate (v1 == v2).  The caller decides what
    residual counts as a collision; `collision_threshold` gives the scale
    used throughout this module.
    """
    gap = np.linalg.norm(v1.coeffs - v2.coeffs)
    if gap <= 1e-12:
        raise DegenerateWitnessError(f"witness pair is degenerate: |v1 - v2| = {gap:.3e}")
    out1 = apply_layer(layer, v1, grid)
    out2 = apply_layer(layer, v2, grid)
    return float(np.linalg.norm(out1.coeffs - out2.coeffs))


def collision_threshold(layer: FiniteRankLayer, v1: SpectralCoeffs, grid: Grid) -> float:
    out1 = apply_layer(layer, v1, grid)
    return POINTWISE_TOL * (1.0 + out1.l2_norm())


def certify_bijective_activation(layer: FiniteRankLayer) -> CertReport:
    """Certify a layer whose activation is injective.

    Injectivity of the layer reduces to injectivity of the coefficient
    block matrix; the verdict compares sigma_min against
    ``SINGULAR_TOL * sigma_max``.  When the matrix fails the test, the
    least singular direction yields a witness pair (0, kernel direction).
    """
    if not layer.activation.is_injective:
        raise ValueError(
            f"activation {layer.activation.kind!r} is not injective; "
            f"use certify_relu_dss"
        )
    mat = block_matrix(layer)
    _, svals, vt = np.linalg.svd(mat)
    sigma_max = float(svals[0])
    # A wide matrix (more input than output dims) can never be injective.
    sigma_min = float(svals[-1]) if mat.shape[0] >= mat.shape[1] else 0.0
    certified = sigma_min > SINGULAR_TOL * sigma_max and sigma_max > 0.0
    if certified:
        return CertReport(
            verdict=VERDICT_CERTIFIED,
            sigma_min=sigma_min,
            sigma_max=sigma_max,
            trials=0,
            bijective_on_span=(mat.shape[0] == mat.shape[1]),
        )
    # Kernel direction: least right-singular vector (or any direction if C = 0).
    if sigma_max == 0.0:
        direction = np.zeros(mat.shape[1])
        direction[0] = 1.0
    else:
        direction = vt[-1]
    v1 = unstack_coeffs(np.zeros(mat.shape[1]), layer.basis, layer.n, layer.d_in)
    v2 = unstack_coeffs(direction, layer.basis, layer.n, layer.d_in)
    return CertReport(
        verdict=VERDICT_COUNTEREXAMPLE,
        sigma_min=sigma_min,
        sigma_max=sigma_max,
        trials=0,
        witness=(v1, v2),
    )


def _sample_inputs(layer: FiniteRankLayer, trials: int, seed: int):
    """Deterministic probes first (zero, +-unit coefficients), then noise."""
    basis, n, d = layer.basis, layer.n, layer.d_in
    probes = [SpectralCoeffs(basis, n, np.zeros((d, n)))]
    for c in range(d):
        for k in range(n):
            for sign in (1.0, -1.0):
                coeffs = np.zeros((d, n))
                coeffs[c, k] = sign
                probes.append(SpectralCoeffs(basis, n, coeffs))
    for t in range(len(probes)):
        if t >= trials:
            return
        yield probes[t]
    for t in range(len(probes), trials):
        rng = np.random.default_rng([seed, t])
        yield SpectralCoeffs(basis, n, rng.standard_normal((d, n)))


def _active_rows(layer: FiniteRankLayer, active: np.ndarray) -> np.ndarray:
    """Rows of the block matrix belonging to the active output channels."""
    mat = block_matrix(layer)
    keep = np.tile(active, layer.n)
    return mat[keep]


def certify_relu_dss(
    layer: FiniteRankLayer, grid: Grid, trials: int = 1000, seed: int = 0
) -> CertReport:
    """Collision search for ReLU layers.

    For each sampled input v, channels whose pre-activation stays strictly
    positive on the whole grid are "active"; a collision direction must lie
    in the kernel of the active-row block matrix and satisfy, on every
    inactive channel, the pointwise conditions

    * where the pre-activation is <= 0: it dominates the direction's value,
    * where it is > 0: the direction's value vanishes.

    The first direction and scaling that pass yield the witness
    (v, v - direction), which is re-verified through the layer before
    being reported.
    """
    if layer.activation.kind != "relu":
        raise ValueError(f"DSS search expects a relu layer, got {layer.activation.kind!r}")
    mat = block_matrix(layer)
    svals = np.linalg.svd(mat, compute_uv=False)
    sigma_max = float(svals[0]) if svals.size else 0.0
    sigma_min = float(svals[-1]) if mat.shape[0] >= mat.shape[1] else 0.0

    used = 0
    for v in _sample_inputs(layer, trials, seed):
        used += 1
        pre = from_spectral(apply_affine(layer, v), grid).values  # (d_out, M)
        active = np.min(pre, axis=1) > ACTIVE_MARGIN
        if active.all():
            c_active = mat
        else:
            c_active = _active_rows(layer, active)
        if c_active.shape[0] == 0:
            kernel = np.eye(mat.shape[1])
        else:
            kernel = scipy.linalg.null_space(c_active)
        if kernel.size == 0:
            continue
        for col in kernel.T:
            direction = unstack_coeffs(col, layer.basis, layer.n, layer.d_in)
            dir_vals = from_spectral(apply_finite_rank(layer, direction), grid).values
            for t in _SCALES:
                if _satisfies_sign_conditions(pre, active, t * dir_vals):
                    v2 = SpectralCoeffs(layer.basis, layer.n, v.coeffs - t * direction.coeffs)
                    residual = verify_collision(layer, v, v2, grid)
                    if residual <= collision_threshold(layer, v, grid):
                        return CertReport(
                            verdict=VERDICT_COUNTEREXAMPLE,
                            sigma_min=sigma_min,
                            sigma_max=sigma_max,
                            trials=used,
                            seed=seed,
                            witness=(v, v2),
                        )
    return CertReport(
        verdict=VERDICT_NO_COUNTEREXAMPLE,
        sigma_min=sigma_min,
        sigma_max=sigma_max,
        trials=used,
        seed=seed,
    )


def _satisfies_sign_conditions(
    pre: np.ndarray, active: np.ndarray, dir_vals: np.ndarray
) -> bool:
    for i in range(pre.shape[0]):
        if active[i]:
            continue
        y = pre[i]
        d = dir_vals[i]
        nonpos = y <= 0.0
        if np.any(y[nonpos] > d[nonpos] + POINTWISE_TOL):
            return False
        if np.any(np.abs(d[~nonpos]) > POINTWISE_TOL):
            return False
    return True
