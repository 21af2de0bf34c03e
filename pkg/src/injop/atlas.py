"""Newton-type local inversion around anchor points, glued into a global
inverse by indicator masks over probe-node bins.

An atlas holds anchors (v_j, g_j = F(v_j), factorized derivative A_j) and a
map from integer cells to anchors.  A target g lands in the cell

    i_l = floor(g(y_l) / eps1 + 1/2)   for probe nodes y_l,

equivalently (i_l - 1/2) eps1 <= g(y_l) < (i_l + 1/2) eps1, so the
half-open bins are disjoint and exactly one composed mask fires for any
target.  Local inversion iterates u <- u - A_j^{-1}(F(u) - g) from v_j and
converges in the discrete H1 norm.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .errors import OutOfBasinError
from .funcspace import Grid, GridFunction, h1_distance, h1_norm
from .nonlin import (
    FactorizedFrechet,
    InversionTrace,
    NonlinearIntegralOperator,
    frechet_derivative,
)

#: Consecutive H1 residual increases tolerated before leaving the basin.
BASIN_PATIENCE = 5


def probe_indices(grid_size: int, ell0: int) -> np.ndarray:
    """ell0 equispaced node indices, endpoints included."""
    if not 1 <= ell0 <= grid_size:
        raise ValueError(f"need 1 <= ell0 <= grid size, got {ell0}")
    return np.unique(np.linspace(0, grid_size - 1, ell0).round().astype(int))


def cell_key(g: GridFunction, probe_idx: np.ndarray, eps1: float) -> Tuple[int, ...]:
    """Integer cell of g: bin index of g(y_l) for each probe node."""
    vals = g.values[0, probe_idx]
    return tuple(int(math.floor(v / eps1 + 0.5)) for v in vals)


def mask_apply(
    node_index: int, s: float, h: float, v: GridFunction, w: GridFunction
) -> GridFunction:
    """Pass v through iff w(node) lies in the half-open bin [s-h/2, s+h/2)."""
    val = w.values[0, node_index]
    if s - h / 2.0 <= val < s + h / 2.0:
        return v.copy()
    return GridFunction(v.grid, np.zeros_like(v.values))


def compose_cell_masks(
    cell: Sequence[int],
    probe_idx: np.ndarray,
    eps1: float,
    v: GridFunction,
    w: GridFunction,
) -> GridFunction:
    """Chain one bin mask per probe node; nonzero iff every bin matches."""
    out = v
    for ell, i in enumerate(cell):
        out = mask_apply(int(probe_idx[ell]), i * eps1, eps1, out, w)
    return out


@dataclass
class Anchor:
    """Training input with its image and factorized local linearization."""

    index: int
    v: GridFunction
    g: GridFunction
    fact: FactorizedFrechet
    inv_h1_norm: float


@dataclass
class Atlas:
    probe_idx: np.ndarray
    eps1: float
    ell0: int
    anchors: List[Anchor]
    cell_map: Dict[Tuple[int, ...], int]
    constants: Dict[str, float] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)


def _h1_gram_cholesky(grid: Grid) -> np.ndarray:
    """Lower Cholesky factor of the discrete H1 Gram matrix."""
    m = grid.size
    d = (np.eye(m, k=1)[: m - 1] - np.eye(m)[: m - 1]) / grid.h
    gram = np.diag(grid.weights) + d.T @ (grid.h * d)
    return np.linalg.cholesky(gram)

def _h1_operator_norm_of_inverse(a_mat: np.ndarray, chol: np.ndarray) -> float:
    """H1 -> H1 operator norm of A^{-1} via the Gram Cholesky factor."""
    a_inv = np.linalg.inv(a_mat)
    # norm = sigma_max(L^T A^{-1} L^{-T})
    y = scipy.linalg.solve_triangular(chol, a_inv.T, lower=True).T
    z = chol.T @ y
    return float(np.linalg.svd(z, compute_uv=False)[0])


def _measured_kernel_bounds(op: NonlinearIntegralOperator, t_max: float) -> Tuple[float, float]:
    """Sampled surrogates for the C2 and C3 sup norms of the kernel.

    Sup of |k| and its first three state derivatives (first analytic, the
    rest by central differences of the analytic slope) over the grid and a
    symmetric state range.
    """
    grid = op.grid
    x = grid.nodes[:, None]
    y = grid.nodes[None, :]
    ts = np.linspace(-t_max, t_max, 17)
    dt = float(ts[1] - ts[0])
    shape = (grid.size, grid.size)
    c01 = 0.0
    c2d = 0.0
    c3d = 0.0
    window: List[np.ndarray] = []
    for t in ts:
        table = np.broadcast_to(op.kernel.table(x, y, None, t), shape)
        slope = np.asarray(np.broadcast_to(op.kernel.du(x, y, t), shape), dtype=float)
        c01 = max(c01, float(np.max(np.abs(table))), float(np.max(np.abs(slope))))
        window.append(slope.copy())
        if len(window) == 3:
            ktt = (window[2] - window[0]) / (2.0 * dt)
            kttt = (window[2] - 2.0 * window[1] + window[0]) / dt**2
            c2d = max(c2d, float(np.max(np.abs(ktt))))
            c3d = max(c3d, float(np.max(np.abs(kttt))))
            window.pop(0)
    c2 = max(c01, c2d)
    c3 = max(c2, c3d)
    return c2, c3


def _atlas_constants(
    op: NonlinearIntegralOperator, anchors: List[Anchor], eps1: float
) -> Dict[str, float]:
    """Lipschitz and basin constants, reported for diagnostics only."""
    grid = op.grid
    length = grid.length
    c_s = math.sqrt(2.0 * max(1.0, 1.0 / length))
    r2 = max(anchor.v.h1_norm() for anchor in anchors)
    t_max = max(1.0, 2.0 * max(anchor.v.sup_norm() for anchor in anchors))
    c2, c3 = _measured_kernel_bounds(op, t_max)
    c_b = max(anchor.inv_h1_norm for anchor in anchors)
    c_0 = 3.0 * math.sqrt(length) * c3 * (1.0 + 2.0 * c_s * r2) * c_s**2
    c_l = 2.0 * c2 * length * (1.0 + 2.0 * c_s * r2)
    c_a = c_b**2 * c_l
    c_h = 2.0 * c_b * c_0 + c_a * (c_b + 4.0 * c_0 * r2)
    r = min(1.0 / (2.0 * c_h), r2) if c_h > 0 else r2
    eps0_cap = (1.0 / (8.0 * c_b)) * (1.0 / (2.0 * c_h)) if c_b > 0 and c_h > 0 else 1.0
    return {
        "domain_length": length,
        "C_S": c_s,
        "R2": r2,
        "kernel_c2": c2,
        "kernel_c3": c3,
        "C_0": c_0,
        "C_B": c_b,
        "C_L": c_l,
        "C_A": c_a,
        "C_H": c_h,
        "r": r,
        "eps0": 0.5 * eps0_cap,
        "eps1": eps1,
    }


def build_atlas(
    op: NonlinearIntegralOperator,
    training_inputs: Sequence[GridFunction],
    ell0: int = 4,
    eps1: float = 0.25,
) -> Atlas:
    """Anchor the atlas at the given inputs and bin their images into cells.

    Duplicate cell keys keep the smallest anchor index; the collision is
    recorded in ``atlas.warnings``.
    """
    if not training_inputs:
        raise ValueError("need at least one training input")
    if eps1 <= 0:
        raise ValueError(f"eps1 must be positive, got {eps1}")
    grid = op.grid
    idx = probe_indices(grid.size, ell0)
    chol = _h1_gram_cholesky(grid)
    anchors: List[Anchor] = []
    for j, v in enumerate(training_inputs):
        grid.require_matches(v.grid)
        g = op.apply(v)
        a_mat = frechet_derivative(op, v)
        fact = FactorizedFrechet(a_mat)
        inv_norm = _h1_operator_norm_of_inverse(a_mat, chol)
        anchors.append(Anchor(index=j, v=v.copy(), g=g, fact=fact, inv_h1_norm=inv_norm))
    cell_map: Dict[Tuple[int, ...], int] = {}
    notes: List[str] = []
    for anchor in anchors:
        key = cell_key(anchor.g, idx, eps1)
        if key in cell_map:
            notes.append(
                f"cell {key} hit by anchors {cell_map[key]} and {anchor.index}; "
                f"keeping {cell_map[key]}"
            )
            continue
        cell_map[key] = anchor.index
    for note in notes:
        warnings.warn(note)
    constants = _atlas_constants(op, anchors, eps1)
    return Atlas(
        probe_idx=idx,
        eps1=eps1,
        ell0=int(len(idx)),
        anchors=anchors,
        cell_map=cell_map,
        constants=constants,
        warnings=notes,
    )


def local_invert(
    op: NonlinearIntegralOperator,
    anchor: Anchor,
    g: GridFunction,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> tuple:
    """Newton iteration with the frozen anchor linearization.

    The residual is checked before each step, so the anchor's own image
    returns in one iteration.  Raises :class:`OutOfBasinError` after
    ``BASIN_PATIENCE`` consecutive H1 residual increases.
    """
    op.grid.require_matches(g.grid)
    u = anchor.v.copy()
    trace = InversionTrace(
        meta={"method": "newton", "tol": tol, "anchor": anchor.index, "ratio_kind": "step_h1"}
    )
    increases = 0
    prev_step: Optional[float] = None
    for m in range(1, max_iter + 1):
        diff = op.apply(u).values - g.values
        res_h1 = h1_norm(op.grid, diff)
        res_l2 = float(np.sqrt(np.sum(op.grid.weights * diff**2)))
        if trace.residuals_h1 and res_h1 > trace.residuals_h1[-1]:
            increases += 1
        elif trace.residuals_h1:
            increases = 0
        trace.residuals_l2.append(res_l2)
        trace.residuals_h1.append(res_h1)
        trace.iterations = m
        if res_h1 <= tol:
            trace.converged = True
            return u, trace
        if increases >= BASIN_PATIENCE:
            raise OutOfBasinError(
                f"H1 residual rose {BASIN_PATIENCE} iterations in a row near anchor "
                f"{anchor.index} (last {res_h1:.3e})",
                trace=trace,
            )
        step_vals = anchor.fact.solve(diff[0])
        step = GridFunction(op.grid, step_vals)
        u = u - step
        step_norm = step.h1_norm()
        if prev_step is not None and prev_step > 0:
            trace.ratios.append(step_norm / prev_step)
        prev_step = step_norm
    return u, trace


def global_invert(
    atlas: Atlas,
    op: NonlinearIntegralOperator,
    g: GridFunction,
    tol: float = 1e-8,
    max_iter: int = 50,
) -> tuple:
    """Route g to its cell's anchor and invert locally.

    The half-open bins are disjoint, so the masked sum over cells has
    exactly one nonzero term and reduces to the selected local inverse.
    Unseen cells fall back to the anchor whose image is nearest in the
    discrete H1 distance.
    """
    if not atlas.anchors:
        raise ValueError("atlas has no anchors")
    key = cell_key(g, atlas.probe_idx, atlas.eps1)
    fallback = key not in atlas.cell_map
    if fallback:
        j = min(
            range(len(atlas.anchors)),
            key=lambda i: (h1_distance(g, atlas.anchors[i].g), i),
        )
    else:
        j = atlas.cell_map[key]
    anchor = atlas.anchors[j]
    try:
        u, trace = local_invert(op, anchor, g, tol=tol, max_iter=max_iter)
    except OutOfBasinError as err:
        err.trace.meta.update({"cell": list(key), "fallback": fallback})
        raise OutOfBasinError(
            f"{err} [cell {key}, fallback={fallback}]", trace=err.trace
        ) from err
    trace.meta.update({"cell": list(key), "fallback": fallback})
    return u, trace
