"""Discrete flat torus, its metric structure, and conformal factor families."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "GridTorus",
    "FactorFamily",
    "ConformalFactor",
    "build_torus",
    "torus_distance",
    "ball_volume",
    "make_factor",
]


@dataclass(frozen=True)
class GridTorus:
    """Periodic lattice ``(dx Z / L Z)^n`` with uniform node measure ``dx**n``.

    Nodes are numbered in row-major order of their integer multi-index, so
    node ``i`` has multi-index ``np.unravel_index(i, (N,) * n)``.
    """

    n: int
    N: int
    L: float = 1.0

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.n}")
        if self.N < 4:
            raise ValueError(f"need at least 4 nodes per axis, got {self.N}")
        if not self.L > 0:
            raise ValueError(f"side length must be positive, got {self.L}")

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.n

    @property
    def num_nodes(self) -> int:
        return self.N**self.n

    @property
    def diameter(self) -> float:
        """Largest wrap distance between two nodes."""
        half = (self.N // 2) * self.dx
        return float(np.sqrt(self.n) * half)

    @cached_property
    def multi_index(self) -> np.ndarray:
        idx = np.indices(self.shape).reshape(self.n, -1).T
        idx.setflags(write=False)
        return idx

    @cached_property
    def coords(self) -> np.ndarray:
        c = self.multi_index * self.dx
        c.setflags(write=False)
        return c

    @cached_property
    def neighbors(self) -> np.ndarray:
        """``(num_nodes, 2n)`` table; columns ``2i`` and ``2i+1`` are the +/- steps on axis i."""
        mi = self.multi_index
        cols = []
        for axis in range(self.n):
            for step in (1, -1):
                shifted = mi.copy()
                shifted[:, axis] = (shifted[:, axis] + step) % self.N
                cols.append(np.ravel_multi_index(shifted.T, self.shape))
        nb = np.stack(cols, axis=1)
        nb.setflags(write=False)
        return nb

    @cached_property
    def mu(self) -> np.ndarray:
        m = np.full(self.num_nodes, self.dx**self.n)
        m.setflags(write=False)
        return m

    def shift(self, x, axis: int, step: int = 1):
        """Node index of ``x + step * e_axis``."""
        mi = self.multi_index[np.asarray(x)].copy()
        mi[..., axis] = (mi[..., axis] + step) % self.N
        return np.ravel_multi_index(np.moveaxis(mi, -1, 0), self.shape)

    def index(self, multi) -> int:
        return int(np.ravel_multi_index(tuple(np.asarray(multi) % self.N), self.shape))

    def distances_from(self, x) -> np.ndarray:
        """Wrap distance from node(s) ``x`` to every node, shape ``(..., num_nodes)``."""
        return torus_distance(self, np.asarray(x)[..., None], np.arange(self.num_nodes))


def build_torus(n: int, N: int, L: float = 1.0) -> GridTorus:
    return GridTorus(int(n), int(N), float(L))


def torus_distance(torus: GridTorus, x, y):
    """Euclidean distance with per-axis periodic wrap between node indices.

    Broadcasts over ``x`` and ``y``.

    >>> t = build_torus(2, 4, 1.0)
    >>> float(torus_distance(t, 0, t.index((2, 2))))  # doctest: +ELLIPSIS
    0.7071067811...
    """
    mi = torus.multi_index
    k = np.abs(mi[np.asarray(x)] - mi[np.asarray(y)])
    k = np.minimum(k, torus.N - k)
    d = np.sqrt(np.sum(k.astype(float) ** 2, axis=-1)) * torus.dx
    return d if d.ndim else float(d)


def ball_volume(torus: GridTorus, measure, x, r):
    """Measure of the closed ball ``B(x, r)``; broadcasts over ``x`` and ``r``."""
    measure = np.asarray(measure, dtype=float)
    x = np.asarray(x)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be non-negative")
    xb, rb = np.broadcast_arrays(x, r)
    out = np.empty(xb.shape)
    # tolerance absorbs rounding of lattice distances sitting exactly on r
    tol = 1e-9 * torus.dx
    for ux in np.unique(xb):
        sel = xb == ux
        d = torus.distances_from(ux)
        order = np.argsort(d, kind="stable")
        ds, cm = d[order], np.cumsum(measure[order])
        pos = np.searchsorted(ds, rb[sel] + tol, side="right")
        out[sel] = np.where(pos > 0, cm[np.maximum(pos - 1, 0)], 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FactorFamily:
    """Parametrised conformal factor ``h = 1 - phi`` with ``max|phi| = amplitude``.

    kind
        ``constant``: ``phi = a``.
        ``sinusoidal``: ``phi = a * mean_i cos(2 pi k x_i / L)``.
        ``bump``: ``phi = a * exp(-d(x, c)^2 / (2 w^2))``, ``w = width * L``.
    """

    kind: str = "sinusoidal"
    amplitude: float = 0.1
    wavenumber: int = 1
    width: float = 0.125
    center: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoidal", "bump"):
            raise ValueError(f"unknown factor kind {self.kind!r}")
        if not 0 <= self.amplitude < 1:
            raise ValueError(f"amplitude must lie in [0, 1), got {self.amplitude}")
        if self.width <= 0:
            raise ValueError("bump width must be positive")

    def phi(self, torus: GridTorus) -> np.ndarray:
        a = self.amplitude
        if self.kind == "constant":
            return np.full(torus.num_nodes, a)
        if self.kind == "sinusoidal":
            arg = 2 * np.pi * self.wavenumber * torus.multi_index / torus.N
            return a * np.mean(np.cos(arg), axis=1)
        c = self.center if self.center is not None else (torus.N // 2,) * torus.n
        d = torus.distances_from(torus.index(c))
        w = self.width * torus.L
        return a * np.exp(-(d**2) / (2 * w**2))


@dataclass(frozen=True, eq=False)
class ConformalFactor:
    """Node-sampled conformal factor together with its Doob and measure data."""

    torus: GridTorus
    h: np.ndarray
    H: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    mu_bar: np.ndarray = field(repr=False)
    mu_tilde: np.ndarray = field(repr=False)

    @property
    def phi(self) -> np.ndarray:
        return 1.0 - self.h

    @property
    def phi_inf(self) -> float:
        return float(np.max(np.abs(self.phi)))

    @property
    def mu(self) -> np.ndarray:
        return self.torus.mu

    def measure(self, tag: str) -> np.ndarray:
        return {"mu": self.mu, "mu_bar": self.mu_bar, "mu_tilde": self.mu_tilde}[tag]

    @classmethod
    def from_h(cls, torus: GridTorus, h) -> "ConformalFactor":
        from .operators import apply_laplacian

        h = np.array(h, dtype=float).reshape(torus.num_nodes)
        if np.any(h <= 0) or not np.all(np.isfinite(h)):
            raise ValueError("conformal factor must be positive and finite")
        n = torus.n
        H = h ** ((n - 2) / 4)
        W = apply_laplacian(torus, H) / H
        mu_bar = H**2 * torus.mu
        mu_tilde = h * mu_bar
        for arr in (h, H, W, mu_bar, mu_tilde):
            arr.setflags(write=False)
        return cls(torus, h, H, W, mu_bar, mu_tilde)


def make_factor(torus: GridTorus, family: FactorFamily) -> ConformalFactor:
    """Sample ``family`` on ``torus`` and populate ``H``, ``W`` and the measures."""
    return ConformalFactor.from_h(torus, 1.0 - family.phi(torus))
