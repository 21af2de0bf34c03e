"""Finite-rank integral operator layers and their networks.

A layer maps an n-channel function u to an m-channel function via

    (K u)(x) = sum_{k,p <= N} C[k,p] (u, phi_k) phi_p(x),     C[k,p] in R^{m x n},

followed by a spectral bias and a pointwise activation.  In coefficient
space the layer is the block matrix with (p, k) block C[k, p]; activations
are evaluated on a grid and the result is projected back to the first N
modes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError
from .funcspace import (
    BasisSpec,
    Grid,
    GridFunction,
    SpectralCoeffs,
    from_spectral,
    to_spectral,
)

ACTIVATION_KINDS = ("identity", "relu", "leaky_relu", "sigmoid")


@dataclass(frozen=True)
class Activation:
    """Pointwise activation; ``a`` is the LeakyReLU negative-side slope."""

    kind: str = "identity"
    a: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu":
            if self.a is None:
                raise ValueError("leaky_relu needs a slope parameter a")
        elif self.a is not None:
            raise ValueError(f"{self.kind} takes no parameter")

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return np.asarray(x, dtype=float)
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        if self.kind == "leaky_relu":
            return np.maximum(x, 0.0) - self.a * np.maximum(-x, 0.0)
        return 1.0 / (1.0 + np.exp(-x))  # sigmoid

    @property
    def is_injective(self) -> bool:
        if self.kind == "relu":
            return False
        if self.kind == "leaky_relu":
            return self.a > 0.0
        return True

    @property
    def is_identity_map(self) -> bool:
        """True when the activation is literally the identity function."""
        return self.kind == "identity" or (self.kind == "leaky_relu" and self.a == 1.0)

    def inverse(self, x: np.ndarray) -> np.ndarray:
        """Pointwise inverse; only defined for injective kinds."""
        if not self.is_injective:
            raise ValueError(f"{self.kind} has no inverse")
        if self.is_identity_map:
            return np.asarray(x, dtype=float)
        if self.kind == "leaky_relu":
            inv = Activation("leaky_relu", 1.0 / self.a)
            return inv.apply(x)
        x = np.asarray(x, dtype=float)
        return np.log(x) - np.log1p(-x)  # sigmoid


@dataclass
class FiniteRankLayer:
    """One finite-rank integral layer.

    Attributes
    ----------
    d_in, d_out : int
        Input/output channel counts.
    n : int
        Spectral order N shared by input and output.
    c : ndarray, shape (n, n, d_out, d_in)
        Kernel blocks indexed [input mode k][output mode p][out chan][in chan].
    bias : SpectralCoeffs
        Output-side bias, shape (d_out, n).
    activation : Activation
    """

    d_in: int
    d_out: int
    n: int
    c: np.ndarray
    bias: SpectralCoeffs
    activation: Activation = field(default_factory=Activation)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        expected = (self.n, self.n, self.d_out, self.d_in)
        if self.c.shape != expected:
            raise DimensionError(f"kernel blocks have shape {self.c.shape}, expected {expected}")
        if self.bias.coeffs.shape != (self.d_out, self.n):
            raise DimensionError(
                f"bias has shape {self.bias.coeffs.shape}, expected {(self.d_out, self.n)}"
            )

    @property
    def basis(self) -> BasisSpec:
        return self.bias.basis


def zero_bias(basis: BasisSpec, d_out: int, n: int) -> SpectralCoeffs:
    return SpectralCoeffs(basis, n, np.zeros((d_out, n)))


@dataclass
class FiniteRankNetwork:
    """Composition of finite-rank layers; the final layer is linear."""

    layers: list

    def __post_init__(self):
        if not self.layers:
            raise DimensionError("network needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.d_out != nxt.d_in:
                raise DimensionError(
                    f"layer widths do not chain: {prev.d_out} -> {nxt.d_in}"
                )
            if prev.n != nxt.n:
                raise DimensionError("all layers must share the spectral order")
            if prev.basis != nxt.basis:
                raise DimensionError("all layers must share the basis")
        if not self.layers[-1].activation.is_identity_map:
            raise DimensionError("final layer must carry the identity activation")

    @property
    def n(self) -> int:
        return self.layers[0].n

    @property
    def basis(self) -> BasisSpec:
        return self.layers[0].basis

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_out(self) -> int:
        return self.layers[-1].d_out


def apply_finite_rank(layer: FiniteRankLayer, u: SpectralCoeffs) -> SpectralCoeffs:
    """Apply only the kernel part: out[:, p] = sum_k C[k, p] @ u[:, k]."""
    if u.n != layer.n:
        raise DimensionError(f"coefficient order {u.n} != layer order {layer.n}")
    if u.channels != layer.d_in:
        raise DimensionError(f"{u.channels} channels fed to a d_in={layer.d_in} layer")
    out = np.einsum("kpij,jk->ip", layer.c, u.coeffs)
    return SpectralCoeffs(layer.basis, layer.n, out)


def apply_affine(layer: FiniteRankLayer, u: SpectralCoeffs) -> SpectralCoeffs:
    """Kernel plus bias, no activation."""
    out = apply_finite_rank(layer, u)
    out.coeffs = out.coeffs + layer.bias.coeffs
    return out


def apply_layer(layer: FiniteRankLayer, u: SpectralCoeffs, grid: Grid) -> SpectralCoeffs:
    """Full layer: affine map, activation on the grid, reprojection.

    Identity-map activations skip the grid round trip, so purely linear
    layers compose exactly.
    """
    z = apply_affine(layer, u)
    if layer.activation.is_identity_map:
        return z
    g = from_spectral(z, grid)
    activated = GridFunction(grid, layer.activation.apply(g.values))
    return to_spectral(activated, layer.basis, layer.n)


def apply_network(net: FiniteRankNetwork, u: SpectralCoeffs, grid: Grid) -> SpectralCoeffs:
    for layer in net.layers:
        u = apply_layer(layer, u, grid)
    return u


def block_matrix(layer: FiniteRankLayer) -> np.ndarray:
    """Dense (N*d_out) x (N*d_in) matrix on mode-major stacked coefficients.

    The stacked vector lists mode 1's channels, then mode 2's, and so on;
    block (p, k) of the matrix is C[k, p].
    """
    return layer.c.transpose(1, 2, 0, 3).reshape(layer.n * layer.d_out, layer.n * layer.d_in)


def stack_coeffs(c: SpectralCoeffs) -> np.ndarray:
    """Mode-major flattening matching :func:`block_matrix`."""
    return c.coeffs.T.reshape(-1)


def unstack_coeffs(vec: np.ndarray, basis: BasisSpec, n: int, channels: int) -> SpectralCoeffs:
    vec = np.asarray(vec, dtype=float)
    if vec.size != n * channels:
        raise DimensionError(f"vector of size {vec.size} is not {n} x {channels}")
    return SpectralCoeffs(basis, n, vec.reshape(n, channels).T)


def blocks_from_matrix(mat: np.ndarray, n: int, d_out: int, d_in: int) -> np.ndarray:
    """Inverse of :func:`block_matrix`: dense matrix back to C[k, p] blocks."""
    if mat.shape != (n * d_out, n * d_in):
        raise DimensionError(f"matrix shape {mat.shape} is not ({n * d_out}, {n * d_in})")
    return mat.reshape(n, d_out, n, d_in).transpose(2, 0, 1, 3)


@dataclass
class TruncationResult:
    layer: FiniteRankLayer
    hs_tail: float
    tail_clamped: bool


def truncate_kernel(
    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray],
    grid: Grid,
    basis: BasisSpec,
    n: int,
) -> TruncationResult:
    """Project a scalar bivariate kernel k(x, y) onto rank n.

    Returns the single-channel layer with blocks
    C[k, p] = (k, phi_k(y) phi_p(x)) under the grid quadrature, together
    with the Hilbert-Schmidt tail estimate

        tail^2 = ||k||_HS^2 - sum_{k,p <= n} C[k,p]^2 .

    Rounding can push the bracket slightly negative when the kernel is
    numerically inside the span; the tail is clamped to zero and flagged.
    """
    basis.require_matches_grid(grid)
    x = grid.nodes[:, None]
    y = grid.nodes[None, :]
    table = np.asarray(kernel(x, y), dtype=float)
    if table.shape != (grid.size, grid.size):
        raise DimensionError(
            f"kernel table has shape {table.shape}, expected {(grid.size, grid.size)}"
        )
    phi_w = basis.eval_modes(grid.nodes, n) * grid.weights  # (n, M)
    # C[k, p] = sum_{s,t} w_s w_t k(x_s, y_t) phi_k(y_t) phi_p(x_s)
    coeff = phi_w @ table.T @ phi_w.T  # rows k (input mode), cols p (output mode)
    hs_sq = float(np.sum(grid.weights[:, None] * grid.weights[None, :] * table**2))
    tail_sq = hs_sq - float(np.sum(coeff**2))
    clamped = tail_sq < 0.0
    if clamped:
        warnings.warn(
            f"Hilbert-Schmidt tail^2 = {tail_sq:.3e} clamped to 0 (kernel is "
            f"numerically inside the span)",
            stacklevel=2,
        )
        tail_sq = 0.0
    c = coeff[:, :, None, None]  # (k, p, 1, 1)
    layer = FiniteRankLayer(
        d_in=1, d_out=1, n=n, c=c, bias=zero_bias(basis, 1, n), activation=Activation()
    )
    return TruncationResult(layer=layer, hs_tail=float(np.sqrt(tail_sq)), tail_clamped=clamped)
