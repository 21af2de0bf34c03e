"""Projection pairs, rank reductions, and the injective lift.

The lift augments a network with an identity-carrying pathway so the
augmented map H(a) = (pathway(a); original(a)) is injective, then removes
the pathway again with a reduction B that is itself injective on the range
of H.  B comes from a pair of nearby orthogonal projections: the reference
projection kills the pathway block, the tilted one leans each protected
(mode, channel) direction into a reserved high-mode slot of the last
channel, and the direct rotation between the two (built from the pair of
projections) intertwines them.  Composing "restrict to the output
channels" with that rotation and the tilted projection gives B.

A randomized alternative draws the tilted subspace by rotating the
reference one with a random rotation and checks injectivity empirically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import (
    DimensionError,
    IllConditionedError,
    ReductionVerificationError,
)
from .finite_rank import (
    Activation,
    FiniteRankLayer,
    FiniteRankNetwork,
    apply_network,
    block_matrix,
    blocks_from_matrix,
    stack_coeffs,
    zero_bias,
)
from .funcspace import BasisSpec, Grid, SpectralCoeffs, from_spectral, to_spectral

LIFT_MODES = ("injective", "relu")


@dataclass
class ProjectionPair:
    """Reference and tilted projections with their intertwining rotation.

    All three matrices act on mode-major stacked coefficients of an
    ``m``-channel function at order ``n_total``; entry (k, c) of the
    coefficient table sits at stacked index ``k * m + c``.

    ``p_zero`` projects onto the complement of the protected block (the
    first ``n_core`` modes of the first ``m - ell`` channels); ``p_alpha``
    projects onto the complement of the tilted block; ``q`` is the
    rotation with ``q @ p_alpha = p_zero @ q``.
    """

    alpha: float
    m: int
    ell: int
    n_core: int
    n_total: int
    p_zero: np.ndarray
    p_alpha: np.ndarray
    q: np.ndarray

    @property
    def dim(self) -> int:
        return self.m * self.n_total

    def tilt_norm(self) -> float:
        """Operator norm of p_alpha - p_zero (the measured eps0)."""
        return float(np.linalg.norm(self.p_alpha - self.p_zero, 2))


@dataclass
class ReductionMap:
    """Dense reduction matrix from stacked m-channel to stacked ell-channel
    coefficients, with provenance metadata."""

    b: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    def row_orthonormality_defect(self) -> float:
        gram = self.b @ self.b.T
        return float(np.max(np.abs(gram - np.eye(gram.shape[0]))))


def _stacked_index(k: int, c: int, m: int) -> int:
    return k * m + c


def _kato_rotation(p_zero: np.ndarray, p_alpha: np.ndarray) -> np.ndarray:
    """Direct rotation between two orthogonal projections.

    Built as (p0 p + (1-p0)(1-p)) (1 - (p0 - p)^2)^{-1/2} with the inverse
    square root taken through a symmetric eigendecomposition.  Fails when
    the projections are too far apart for the square root to make sense.
    """
    dim = p_zero.shape[0]
    diff = p_zero - p_alpha
    base = np.eye(dim) - diff @ diff
    evals, evecs = np.linalg.eigh(base)
    lam_min = float(evals.min())
    if lam_min <= 1e-12:
        raise IllConditionedError(
            f"projections too far apart: min eigenvalue {lam_min:.3e} of "
            f"1 - (p0 - p)^2"
        )
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    eye = np.eye(dim)
    r = p_zero @ p_alpha + (eye - p_zero) @ (eye - p_alpha)
    return r @ inv_sqrt


def build_projection_pair(m: int, ell: int, n_core: int, alpha: float) -> ProjectionPair:
    """Construct the tilted projection pair on stacked coefficients.

    Parameters
    ----------
    m : int
        Total channel count; the first ``m - ell`` channels are protected.
    ell : int
        Output channels kept by the reduction, ``1 <= ell < m``.
    n_core : int
        Protected mode count per protected channel.
    alpha : float
        Tilt amplitude in (0, 1/2).  Each protected direction is tilted
        into its reserved high-mode slot of the last channel with
        amplitude alpha, so the projection difference has norm exactly
        alpha.
    """
    if not 1 <= ell < m:
        raise DimensionError(f"need 1 <= ell < m, got ell={ell}, m={m}")
    if n_core < 1:
        raise DimensionError(f"n_core must be positive, got {n_core}")
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")
    protected = m - ell
    n_total = n_core * (1 + protected)
    dim = m * n_total
    n_dirs = n_core * protected
    u_zero = np.zeros((dim, n_dirs))
    u_alpha = np.zeros((dim, n_dirs))
    amp_keep = math.sqrt(1.0 - alpha * alpha)
    col = 0
    for k in range(n_core):
        for c in range(protected):
            slot = _stacked_index(k, c, m)
            xi_mode = n_core + k * protected + c
            xi_slot = _stacked_index(xi_mode, m - 1, m)
            u_zero[slot, col] = 1.0
            u_alpha[slot, col] = amp_keep
            u_alpha[xi_slot, col] = alpha
            col += 1
    eye = np.eye(dim)
    p_zero = eye - u_zero @ u_zero.T
    p_alpha = eye - u_alpha @ u_alpha.T
    q = _kato_rotation(p_zero, p_alpha)
    return ProjectionPair(
        alpha=alpha,
        m=m,
        ell=ell,
        n_core=n_core,
        n_total=n_total,
        p_zero=p_zero,
        p_alpha=p_alpha,
        q=q,
    )


def _keep_indices(m: int, ell: int, n_total: int) -> list:
    """Stacked indices of the last ell channels, mode-major order."""
    return [_stacked_index(k, c, m) for k in range(n_total) for c in range(m - ell, m)]


def build_reduction_explicit(pair: ProjectionPair) -> ReductionMap:
    """Restrict-to-output-channels composed with the rotation and the
    tilted projection."""
    keep = _keep_indices(pair.m, pair.ell, pair.n_total)
    b = (pair.q @ pair.p_alpha)[keep, :]
    return ReductionMap(
        b=b,
        kind="explicit",
        meta={
            "alpha": pair.alpha,
            "m": pair.m,
            "ell": pair.ell,
            "n_core": pair.n_core,
            "n_total": pair.n_total,
            "tilt": pair.tilt_norm(),
        },
    )


def check_reduction_dimensions(n_in_modes: int, out_modes: int):
    """The randomized route needs out_modes >= 2 * n_in_modes + 1."""
    if n_in_modes < 1 or out_modes < 1:
        raise DimensionError("mode counts must be positive")
    if out_modes < 2 * n_in_modes + 1:
        raise DimensionError(
            f"randomized reduction needs out_modes >= 2 * n_in_modes + 1; "
            f"got n_in_modes={n_in_modes}, out_modes={out_modes}"
        )


def build_reduction_randomized(
    t_map: Callable[[np.ndarray], np.ndarray],
    n_in_modes: int,
    out_modes: int,
    seed: int = 0,
    rotation_scale: float = 0.1,
    vectorized: bool = True,
    n_jacobian_points: int = 32,
    n_collision_pairs: int = 10_000,
    max_retries: int = 8,
) -> ReductionMap:
    """Draw a random reduction for a black-box graph map and verify it.

    ``t_map`` sends stacked input coefficients (n_in_modes) to stacked
    ambient coefficients (n_in_modes + out_modes); with ``vectorized``
    (the default) it must accept a (batch, n_in_modes) array.  The
    reference complement is the output block; the tilted complement is its
    image under exp(rotation_scale * S) for a random unit-norm
    skew-symmetric S.  Each candidate B is accepted only if the finite
    difference Jacobian of B o T has full rank n_in_modes at
    ``n_jacobian_points`` seeded points and no collision shows up among
    ``n_collision_pairs`` seeded pairs; otherwise a fresh seed is drawn,
    up to ``max_retries`` times.
    """
    check_reduction_dimensions(n_in_modes, out_modes)
    dtot = n_in_modes + out_modes
    if vectorized:
        batch_map = t_map
    else:
        batch_map = lambda batch: np.stack([np.asarray(t_map(row)) for row in batch])

    p_zero = np.zeros((dtot, dtot))
    p_zero[n_in_modes:, n_in_modes:] = np.eye(out_modes)

    for attempt in range(max_retries):
        rng = np.random.default_rng([seed, attempt])
        s = rng.standard_normal((dtot, dtot))
        skew = (s - s.T) / 2.0
        skew /= np.linalg.norm(skew, 2)
        rot = scipy.linalg.expm(rotation_scale * skew)
        p = rot @ p_zero @ rot.T
        q = _kato_rotation(p_zero, p)
        b = (q @ p)[n_in_modes:, :]

        if _verify_randomized(
            batch_map, b, n_in_modes, rng, n_jacobian_points, n_collision_pairs
        ):
            return ReductionMap(
                b=b,
                kind="randomized",
                meta={
                    "seed": seed,
                    "attempt": attempt,
                    "n_in_modes": n_in_modes,
                    "out_modes": out_modes,
                    "tilt": float(np.linalg.norm(p - p_zero, 2)),
                },
            )
    raise ReductionVerificationError(
        f"no randomized reduction passed verification in {max_retries} attempts"
    )


def _verify_randomized(batch_map, b, n_in, rng, n_points, n_pairs) -> bool:
    # (a) full Jacobian rank at seeded points, forward differences.
    points = rng.standard_normal((n_points, n_in))
    h = 1e-6
    probes = [points]
    for i in range(n_in):
        shifted = points.copy()
        shifted[:, i] += h
        probes.append(shifted)
    outputs = batch_map(np.concatenate(probes, axis=0)) @ b.T
    base = outputs[:n_points]
    for p_idx in range(n_points):
        jac = np.empty((b.shape[0], n_in))
        for i in range(n_in):
            jac[:, i] = (outputs[(i + 1) * n_points + p_idx] - base[p_idx]) / h
        svals = np.linalg.svd(jac, compute_uv=False)
        if svals[-1] <= 1e-6 * svals[0]:
            return False
    # (b) no collisions among seeded pairs.
    u = rng.standard_normal((n_pairs, n_in))
    v = rng.standard_normal((n_pairs, n_in))
    gap_in = np.linalg.norm(u - v, axis=1)
    gap_out = np.linalg.norm(batch_map(u) @ b.T - batch_map(v) @ b.T, axis=1)
    ok = gap_in > 0
    return bool(np.all(gap_out[ok] >= 1e-9 * gap_in[ok]))


# ---------------------------------------------------------------------------
# Injective lift


def _inj_blocks(n: int, d: int) -> np.ndarray:
    """Kernel blocks of the order-n projection: delta_{kp} I_d."""
    t = np.zeros((n, n, d, d))
    for k in range(n):
        t[k, k] = np.eye(d)
    return t


def _pad_layer(layer: FiniteRankLayer, n_total: int) -> FiniteRankLayer:
    if n_total == layer.n:
        return layer
    c = np.zeros((n_total, n_total, layer.d_out, layer.d_in))
    c[: layer.n, : layer.n] = layer.c
    bias = np.zeros((layer.d_out, n_total))
    bias[:, : layer.n] = layer.bias.coeffs
    return FiniteRankLayer(
        d_in=layer.d_in,
        d_out=layer.d_out,
        n=n_total,
        c=c,
        bias=SpectralCoeffs(layer.basis, n_total, bias),
        activation=layer.activation,
    )


def _augment_network(net: FiniteRankNetwork, mode: str) -> FiniteRankNetwork:
    """Attach the identity-carrying pathway in front of every layer.

    In relu mode the pathway is carried as a (+, -) pair so each hidden
    layer can rebuild the clean value with ReLU(t) - ReLU(-t) = t; the
    final layer collapses the pair, so the augmented output's first
    channels are exactly the input.  In injective mode the pathway is a
    single block that passes through the activations.
    """
    layers = net.layers
    n, basis, d = net.n, net.basis, net.d_in
    inj = _inj_blocks(n, d)
    aug = []
    if len(layers) == 1:
        final = layers[0]
        c = np.zeros((n, n, d + final.d_out, d))
        c[:, :, :d, :] = inj
        c[:, :, d:, :] = final.c
        bias = np.zeros((d + final.d_out, n))
        bias[d:] = final.bias.coeffs
        aug.append(
            FiniteRankLayer(
                d_in=d,
                d_out=d + final.d_out,
                n=n,
                c=c,
                bias=SpectralCoeffs(basis, n, bias),
                activation=Activation(),
            )
        )
        return FiniteRankNetwork(aug)

    if mode == "relu":
        first = layers[0]
        c = np.zeros((n, n, 2 * d + first.d_out, d))
        c[:, :, :d, :] = inj
        c[:, :, d : 2 * d, :] = -inj
        c[:, :, 2 * d :, :] = first.c
        bias = np.zeros((2 * d + first.d_out, n))
        bias[2 * d :] = first.bias.coeffs
        aug.append(
            FiniteRankLayer(
                d_in=d,
                d_out=2 * d + first.d_out,
                n=n,
                c=c,
                bias=SpectralCoeffs(basis, n, bias),
                activation=first.activation,
            )
        )
        for layer in layers[1:-1]:
            c = np.zeros((n, n, 2 * d + layer.d_out, 2 * d + layer.d_in))
            c[:, :, :d, :d] = inj
            c[:, :, :d, d : 2 * d] = -inj
            c[:, :, d : 2 * d, :d] = -inj
            c[:, :, d : 2 * d, d : 2 * d] = inj
            c[:, :, 2 * d :, 2 * d :] = layer.c
            bias = np.zeros((2 * d + layer.d_out, n))
            bias[2 * d :] = layer.bias.coeffs
            aug.append(
                FiniteRankLayer(
                    d_in=2 * d + layer.d_in,
                    d_out=2 * d + layer.d_out,
                    n=n,
                    c=c,
                    bias=SpectralCoeffs(basis, n, bias),
                    activation=layer.activation,
                )
            )
        final = layers[-1]
        c = np.zeros((n, n, d + final.d_out, 2 * d + final.d_in))
        c[:, :, :d, :d] = inj
        c[:, :, :d, d : 2 * d] = -inj
        c[:, :, d:, 2 * d :] = final.c
        bias = np.zeros((d + final.d_out, n))
        bias[d:] = final.bias.coeffs
        aug.append(
            FiniteRankLayer(
                d_in=2 * d + final.d_in,
                d_out=d + final.d_out,
                n=n,
                c=c,
                bias=SpectralCoeffs(basis, n, bias),
                activation=Activation(),
            )
        )
    else:  # injective activations: single pathway block
        first = layers[0]
        c = np.zeros((n, n, d + first.d_out, d))
        c[:, :, :d, :] = inj
        c[:, :, d:, :] = first.c
        bias = np.zeros((d + first.d_out, n))
        bias[d:] = first.bias.coeffs
        aug.append(
            FiniteRankLayer(
                d_in=d,
                d_out=d + first.d_out,
                n=n,
                c=c,
                bias=SpectralCoeffs(basis, n, bias),
                activation=first.activation,
            )
        )
        for layer in layers[1:]:
            c = np.zeros((n, n, d + layer.d_out, d + layer.d_in))
            c[:, :, :d, :d] = inj
            c[:, :, d:, d:] = layer.c
            bias = np.zeros((d + layer.d_out, n))
            bias[d:] = layer.bias.coeffs
            aug.append(
                FiniteRankLayer(
                    d_in=d + layer.d_in,
                    d_out=d + layer.d_out,
                    n=n,
                    c=c,
                    bias=SpectralCoeffs(basis, n, bias),
                    activation=layer.activation,
                )
            )
    return FiniteRankNetwork(aug)


@dataclass
class LiftResult:
    """Outcome of lifting a network to a provably injective one.

    ``network`` is the lifted map G at order ``n_total``; ``augmented``
    is the pathway-carrying map H at the original order; ``eps0`` is the
    measured projection tilt driving the closeness guarantee
    ||original(a) - G(a)|| <= 5 * eps0 * ||H(a)||.
    """

    original: FiniteRankNetwork
    mode: str
    network: FiniteRankNetwork
    augmented: FiniteRankNetwork
    reduction: ReductionMap
    eps0: float
    n: int
    n_total: int
    pair: Optional[ProjectionPair] = None

    def apply(self, a: SpectralCoeffs, grid: Grid) -> SpectralCoeffs:
        """Evaluate the lifted network on an order-n input."""
        return apply_network(self.network, a.padded(self.n_total), grid)

    def apply_augmented(self, a: SpectralCoeffs, grid: Grid) -> SpectralCoeffs:
        return apply_network(self.augmented, a, grid)

    def apply_original(self, a: SpectralCoeffs, grid: Grid) -> SpectralCoeffs:
        return apply_network(self.original, a, grid)

    def recover_input(self, h_out: SpectralCoeffs, grid: Grid) -> SpectralCoeffs:
        """Read the input back off the augmented output's pathway channels.

        Exact in relu mode (the final layer has already collapsed the
        pathway pair to the raw input).  In injective mode the pathway
        passed through the activations, so each one is inverted pointwise
        and reprojected; that is exact for identity-like activations and
        approximate otherwise.
        """
        d = self.original.d_in
        path = SpectralCoeffs(h_out.basis, h_out.n, h_out.coeffs[:d].copy())
        if self.mode == "relu":
            return path
        for layer in reversed(self.original.layers[:-1]):
            if layer.activation.is_identity_map:
                continue
            g = from_spectral(path, grid)
            inverted = g.copy()
            inverted.values = layer.activation.inverse(g.values)
            path = to_spectral(inverted, path.basis, path.n)
        return path


def lift_to_injective(
    net: FiniteRankNetwork,
    mode: str,
    alpha: float = 0.1,
    seed: int = 0,
    randomized: bool = False,
) -> LiftResult:
    """Lift a network to an injective one with a quantified deviation.

    Parameters
    ----------
    net : FiniteRankNetwork
        Hidden activations must all be ReLU (mode "relu") or all be
        injective Identity/LeakyReLU maps (mode "injective").
    mode : {"injective", "relu"}
    alpha : float
        Tilt amplitude of the explicit reduction; the measured eps0
        equals it.
    seed : int
        Only used by the randomized reduction.
    randomized : bool
        Use the randomized reduction (needs the dimension gate
        out_modes >= 2 * n_in_modes + 1) instead of the explicit one.
    """
    if mode not in LIFT_MODES:
        raise ValueError(f"mode must be one of {LIFT_MODES}, got {mode!r}")
    hidden = net.layers[:-1]
    kinds = {layer.activation.kind for layer in hidden}
    if mode == "relu":
        if kinds - {"relu"}:
            raise ValueError(f"relu mode expects all-ReLU hidden layers, got {sorted(kinds)}")
    else:
        bad = [
            layer.activation.kind
            for layer in hidden
            if not (layer.activation.is_injective and layer.activation.kind in ("identity", "leaky_relu"))
        ]
        if bad:
            raise ValueError(
                f"injective mode expects Identity/LeakyReLU hidden layers, got {bad}"
            )

    augmented = _augment_network(net, mode)
    d_in, d_out, n = net.d_in, net.d_out, net.n
    m = d_in + d_out

    if randomized:
        n_in_modes = n * d_in
        n_total = max(n * (1 + d_in), -(-(2 * n_in_modes + 1) // d_out))
        out_modes = n_total * d_out
        pair = None
        t_map = _augmented_coefficient_map(augmented, d_in, d_out, n, n_total)
        reduction = build_reduction_randomized(t_map, n_in_modes, out_modes, seed=seed)
        b_full = _embed_randomized_b(reduction.b, m, d_in, n, n_total)
        eps0 = float(reduction.meta["tilt"])
    else:
        pair = build_projection_pair(m=m, ell=d_out, n_core=n, alpha=alpha)
        n_total = pair.n_total
        reduction = build_reduction_explicit(pair)
        b_full = reduction.b
        eps0 = pair.tilt_norm()

    padded = [_pad_layer(layer, n_total) for layer in augmented.layers]
    final = padded[-1]
    folded_mat = b_full @ block_matrix(final)
    folded_bias = b_full @ stack_coeffs(final.bias)
    lifted_final = FiniteRankLayer(
        d_in=final.d_in,
        d_out=d_out,
        n=n_total,
        c=blocks_from_matrix(folded_mat, n_total, d_out, final.d_in),
        bias=SpectralCoeffs(final.basis, n_total, folded_bias.reshape(n_total, d_out).T),
        activation=Activation(),
    )
    lifted = FiniteRankNetwork(padded[:-1] + [lifted_final])
    return LiftResult(
        original=net,
        mode=mode,
        network=lifted,
        augmented=augmented,
        reduction=reduction,
        eps0=eps0,
        n=n,
        n_total=n_total,
        pair=pair,
    )


def _augmented_coefficient_map(augmented, d_in, d_out, n, n_total):
    """Batched stacked-coefficient map of H for the randomized verifier.

    Input rows are stacked order-n input coefficients; output rows are the
    pathway block (order n) followed by the output block (order n_total,
    zero-padded), which is the ambient layout the randomized reduction
    expects.  Evaluation uses a grid fine enough for the lifted order.
    """
    basis = augmented.basis
    grid = Grid(basis.interval[0], basis.interval[1], max(8 * n_total, 64))
    m = d_in + d_out

    def batch_map(batch):
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        rows = []
        for row in batch:
            a = SpectralCoeffs(basis, n, row.reshape(n, d_in).T)
            h = apply_network(augmented, a, grid)
            path = h.coeffs[:d_in].T.reshape(-1)
            out = np.zeros((d_out, n_total))
            out[:, :n] = h.coeffs[d_in:]
            rows.append(np.concatenate([path, out.T.reshape(-1)]))
        return np.stack(rows)

    return batch_map


def _embed_randomized_b(b_sub, m, d_in, n, n_total):
    """Spread a randomized reduction over the full stacked ambient space."""
    d_out = m - d_in
    dim = m * n_total
    in_idx = [_stacked_index(k, c, m) for k in range(n) for c in range(d_in)]
    out_idx = [_stacked_index(k, c, m) for k in range(n_total) for c in range(d_in, m)]
    b_full = np.zeros((b_sub.shape[0], dim))
    n_in_modes = n * d_in
    b_full[:, in_idx] = b_sub[:, :n_in_modes]
    b_full[:, out_idx] = b_sub[:, n_in_modes:]
    return b_full
