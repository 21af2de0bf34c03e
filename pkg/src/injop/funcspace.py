"""Grids, orthonormal bases, and spectral transforms on an interval.

Functions are represented two ways and the pair of transforms moves
between them:

* :class:`GridFunction` -- channel values sampled on a uniform closed grid,
  integrated with composite trapezoid weights.
* :class:`SpectralCoeffs` -- coefficients against the first ``n`` modes of
  an orthonormal basis (:class:`BasisSpec`).

The trapezoid rule on a uniform closed grid is exact for periodic
trigonometric polynomials, so the Fourier modes stay orthonormal under the
discrete inner product as long as the grid resolves them; ``to_spectral``
enforces the guard ``size >= 8 * n`` before projecting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AliasingGuardError,
    DimensionError,
    GridMismatchError,
    IntervalMismatchError,
)

#: Grid points required per spectral mode before projection is allowed.
ALIASING_FACTOR = 8

#: Interval endpoints are compared with this absolute tolerance.
INTERVAL_TOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform closed grid on [a, b] with composite trapezoid weights.

    Parameters
    ----------
    a, b : float
        Interval endpoints, ``a < b``.
    size : int
        Number of nodes including both endpoints, at least 2.
    """

    a: float = 0.0
    b: float = 1.0
    size: int = 512
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError(f"empty interval: a={self.a}, b={self.b}")
        if self.size < 2:
            raise ValueError(f"grid needs at least 2 nodes, got {self.size}")
        nodes = np.linspace(self.a, self.b, self.size)
        h = (self.b - self.a) / (self.size - 1)
        weights = np.full(self.size, h)
        weights[0] = weights[-1] = h / 2.0
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def h(self) -> float:
        """Node spacing."""
        return (self.b - self.a) / (self.size - 1)

    @property
    def length(self) -> float:
        """Interval length |b - a|."""
        return self.b - self.a

    def matches(self, other: "Grid") -> bool:
        return (
            abs(self.a - other.a) <= INTERVAL_TOL
            and abs(self.b - other.b) <= INTERVAL_TOL
            and self.size == other.size
        )

    def require_matches(self, other: "Grid"):
        if not self.matches(other):
            raise GridMismatchError(
                f"grids differ: [{self.a}, {self.b}] x {self.size} vs "
                f"[{other.a}, {other.b}] x {other.size}"
            )


class BasisSpec:
    """Orthonormal basis family on an interval.

    Two kinds are supported:

    ``"fourier"``
        Constant mode, then interleaved cosine/sine pairs of increasing
        frequency, rescaled from [0, 1] to the interval.  Mode 1 is the
        normalized constant, mode 2k is the cosine of frequency k, mode
        2k+1 the sine.
    ``"step_haar"``
        Normalized indicators of the dyadic blocks [2^-k, 2^-(k-1)) of the
        rescaled interval.  The supports are pairwise disjoint, which is
        the property the discontinuous demo sequences need.  Quadrature
        orthonormality is exact when the dyadic breakpoints land on grid
        nodes (grids with size = 2^q + 1).
    """

    KINDS = ("fourier", "step_haar")

    def __init__(self, kind: str = "fourier", interval=(0.0, 1.0)):
        if kind not in self.KINDS:
            raise ValueError(f"unknown basis kind {kind!r}; expected one of {self.KINDS}")
        a, b = float(interval[0]), float(interval[1])
        if not b > a:
            raise ValueError(f"empty interval: {interval}")
        self.kind = kind
        self.interval = (a, b)

    def __eq__(self, other):
        return (
            isinstance(other, BasisSpec)
            and self.kind == other.kind
            and abs(self.interval[0] - other.interval[0]) <= INTERVAL_TOL
            and abs(self.interval[1] - other.interval[1]) <= INTERVAL_TOL
        )

    def __repr__(self):
        return f"BasisSpec({self.kind!r}, interval={self.interval})"

    def matches_grid(self, grid: Grid) -> bool:
        a, b = self.interval
        return abs(a - grid.a) <= INTERVAL_TOL and abs(b - grid.b) <= INTERVAL_TOL

    def require_matches_grid(self, grid: Grid):
        if not self.matches_grid(grid):
            raise IntervalMismatchError(
                f"basis interval {self.interval} does not match grid "
                f"[{grid.a}, {grid.b}]"
            )

    def eval_modes(self, x: np.ndarray, n: int) -> np.ndarray:
        """Evaluate modes 1..n at points ``x``; returns shape (n, len(x))."""
        if n < 1:
            raise ValueError(f"mode count must be positive, got {n}")
        x = np.asarray(x, dtype=float)
        a, b = self.interval
        length = b - a
        t = (x - a) / length
        out = np.empty((n, x.size))
        if self.kind == "fourier":
            scale = 1.0 / np.sqrt(length)
            out[0] = scale
            for k in range(2, n + 1):
                freq = k // 2
                phase = 2.0 * np.pi * freq * t
                if k % 2 == 0:
                    out[k - 1] = np.sqrt(2.0) * scale * np.cos(phase)
                else:
                    out[k - 1] = np.sqrt(2.0) * scale * np.sin(phase)
        else:  # step_haar
            for k in range(1, n + 1):
                lo, hi = 2.0 ** (-k), 2.0 ** (-k + 1)
                inside = (t >= lo - 1e-12) & (t < hi - 1e-12)
                out[k - 1] = np.where(inside, 2.0 ** (k / 2.0) / np.sqrt(length), 0.0)
        return out

    def gram(self, grid: Grid, n: int) -> np.ndarray:
        """Gram matrix of the first n modes under the grid quadrature."""
        self.require_matches_grid(grid)
        phi = self.eval_modes(grid.nodes, n)
        return (phi * grid.weights) @ phi.T


@dataclass
class GridFunction:
    """Channel-valued function sampled on a grid; values has shape (h, size)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[1] != self.grid.size:
            raise DimensionError(
                f"values have {self.values.shape[1]} nodes, grid has {self.grid.size}"
            )

    @classmethod
    def from_callable(cls, grid: Grid, *fns) -> "GridFunction":
        """Sample one callable per channel on the grid nodes."""
        vals = np.stack([np.broadcast_to(f(grid.nodes), grid.nodes.shape) for f in fns])
        return cls(grid, vals)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.grid.weights * self.values**2)))

    def h1_norm(self) -> float:
        return h1_norm(self.grid, self.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __add__(self, other):
        self.grid.require_matches(other.grid)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other):
        self.grid.require_matches(other.grid)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return GridFunction(self.grid, self.values * float(scalar))

    __rmul__ = __mul__


@dataclass
class SpectralCoeffs:
    """Coefficients of a channel-valued function against basis modes 1..n.

    ``coeffs[c, k-1]`` multiplies mode k in channel c; shape (h, n).
    """

    basis: BasisSpec
    n: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.atleast_2d(np.asarray(self.coeffs, dtype=float))
        if self.coeffs.shape[1] != self.n:
            raise DimensionError(
                f"coefficient array has order {self.coeffs.shape[1]}, expected {self.n}"
            )

    @property
    def channels(self) -> int:
        return self.coeffs.shape[0]

    def l2_norm(self) -> float:
        """L2 norm of the represented function (Parseval)."""
        return float(np.linalg.norm(self.coeffs))

    def copy(self) -> "SpectralCoeffs":
        return SpectralCoeffs(self.basis, self.n, self.coeffs.copy())

    def padded(self, n_new: int) -> "SpectralCoeffs":
        """Zero-pad (or error on shrink) to a higher order."""
        if n_new < self.n:
            raise DimensionError(f"cannot pad order {self.n} down to {n_new}")
        out = np.zeros((self.channels, n_new))
        out[:, : self.n] = self.coeffs
        return SpectralCoeffs(self.basis, n_new, out)


def inner_product(f: GridFunction, g: GridFunction) -> float:
    """Quadrature L2 inner product; channels are summed."""
    f.grid.require_matches(g.grid)
    if f.channels != g.channels:
        raise DimensionError(f"channel mismatch: {f.channels} vs {g.channels}")
    return float(np.sum(f.grid.weights * f.values * g.values))


def to_spectral(f: GridFunction, basis: BasisSpec, n: int) -> SpectralCoeffs:
    """Project a grid function onto the first n basis modes.

    Requires ``f.grid.size >= 8 * n`` so the quadrature resolves products
    of the retained modes.
    """
    basis.require_matches_grid(f.grid)
    if f.grid.size < ALIASING_FACTOR * n:
        raise AliasingGuardError(
            f"grid size {f.grid.size} < {ALIASING_FACTOR} * {n}; refine the grid "
            f"or lower the order"
        )
    phi = basis.eval_modes(f.grid.nodes, n)
    coeffs = f.values @ (phi * f.grid.weights).T
    return SpectralCoeffs(basis, n, coeffs)


def from_spectral(c: SpectralCoeffs, grid: Grid) -> GridFunction:
    """Synthesize coefficients on a grid over the same interval."""
    c.basis.require_matches_grid(grid)
    phi = c.basis.eval_modes(grid.nodes, c.n)
    return GridFunction(grid, c.coeffs @ phi)


def h1_norm(grid: Grid, values: np.ndarray) -> float:
    """Discrete H1 norm: quadrature L2 plus forward-difference derivative."""
    values = np.atleast_2d(values)
    l2sq = np.sum(grid.weights * values**2)
    diff = np.diff(values, axis=1) / grid.h
    dsq = np.sum(diff**2) * grid.h
    return float(np.sqrt(l2sq + dsq))


def h1_distance(f: GridFunction, g: GridFunction) -> float:
    f.grid.require_matches(g.grid)
    return h1_norm(f.grid, f.values - g.values)
