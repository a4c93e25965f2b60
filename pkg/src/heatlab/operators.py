"""Measure-tagged generators: base, weighted, conformal and Schroedinger Laplacians."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .grid_model import ConformalFactor, GridTorus

__all__ = [
    "GeneratorMatrix",
    "apply_laplacian",
    "base_laplacian",
    "weighted_laplacian",
    "conformal_laplacian",
    "schrodinger_operator",
    "doob_residual",
]


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Sparse generator ``A`` that is self-adjoint in ``l^2(measure)``.

    ``tag`` names the measure (``mu``, ``mu_bar`` or ``mu_tilde``).
    """

    matrix: sp.csr_matrix
    measure: np.ndarray
    tag: str
    name: str

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def dense(self) -> np.ndarray:
        a = self.matrix.toarray()
        a.setflags(write=False)
        return a

    @cached_property
    def scale(self) -> float:
        """Largest entry of ``D_m A``; the reference size for round-off tolerances."""
        return float(abs(sp.diags(self.measure) @ self.matrix).max())

    @cached_property
    def symmetry_certificate(self) -> float:
        """``max |(D_m A) - (D_m A)^T|``."""
        dm = sp.diags(self.measure) @ self.matrix
        diff = dm - dm.T
        return float(abs(diff).max()) if diff.nnz else 0.0

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f


def apply_laplacian(torus: GridTorus, f: np.ndarray) -> np.ndarray:
    """Standard ``2n + 1`` point stencil applied to node values ``f``."""
    f = np.asarray(f)
    nb = torus.neighbors
    return (f[nb].sum(axis=1) - 2 * torus.n * f) / torus.dx**2


def _assemble(torus: GridTorus, weight: np.ndarray, measure: np.ndarray, potential=None):
    """Divergence-form stencil with symmetric edge weights.

    ``weight`` has the shape of ``torus.neighbors`` and holds ``c_xy`` for the
    edge from node ``x`` to its neighbour in that column.
    """
    nn = torus.num_nodes
    rows = np.repeat(np.arange(nn), 2 * torus.n)
    cols = torus.neighbors.ravel()
    c = weight.ravel()
    diag = -weight.sum(axis=1)
    if potential is not None:
        diag = diag - potential * measure
    cmat = sp.coo_matrix((c, (rows, cols)), shape=(nn, nn)).tocsr()
    cmat = cmat + sp.diags(diag)
    return sp.diags(1.0 / measure) @ cmat


def base_laplacian(torus: GridTorus) -> GeneratorMatrix:
    w = np.full(torus.neighbors.shape, torus.dx ** (torus.n - 2))
    return GeneratorMatrix(_assemble(torus, w, torus.mu).tocsr(), torus.mu, "mu", "laplacian")


def _edge_weights(torus: GridTorus, factor: ConformalFactor, pairing: str) -> np.ndarray:
    H = factor.H
    nb = torus.neighbors
    if pairing == "geometric":
        pair = H[:, None] * H[nb]
    elif pairing == "arithmetic":
        pair = 0.5 * (H[:, None] ** 2 + H[nb] ** 2)
    else:
        raise ValueError(f"unknown edge pairing {pairing!r}")
    return torus.dx ** (torus.n - 2) * pair


def weighted_laplacian(
    torus: GridTorus, factor: ConformalFactor, pairing: str = "geometric"
) -> GeneratorMatrix:
    """Laplacian of the weighted measure ``mu_bar = H^2 mu``.

    The geometric edge pairing ``H(x) H(y)`` makes the Doob transform an exact
    matrix identity; ``pairing="arithmetic"`` samples ``H^2`` at edge midpoints
    instead and is kept only to measure the resulting O(dx^2) defect.
    """
    w = _edge_weights(torus, factor, pairing)
    a = _assemble(torus, w, factor.mu_bar).tocsr()
    return GeneratorMatrix(a, factor.mu_bar, "mu_bar", "weighted_laplacian")


def conformal_laplacian(
    torus: GridTorus, factor: ConformalFactor, pairing: str = "geometric"
) -> GeneratorMatrix:
    """``h^{-1}`` times the weighted Laplacian, self-adjoint against ``h mu_bar``."""
    wl = weighted_laplacian(torus, factor, pairing)
    a = (sp.diags(1.0 / factor.h) @ wl.matrix).tocsr()
    return GeneratorMatrix(a, factor.mu_tilde, "mu_tilde", "conformal_laplacian")


def schrodinger_operator(torus: GridTorus, factor: ConformalFactor) -> GeneratorMatrix:
    w = np.full(torus.neighbors.shape, torus.dx ** (torus.n - 2))
    a = _assemble(torus, w, torus.mu, potential=factor.W).tocsr()
    return GeneratorMatrix(a, torus.mu, "mu", "schrodinger")


def doob_residual(
    torus: GridTorus, factor: ConformalFactor, n_vectors: int = 10, seed: int = 0, pairing="geometric"
) -> float:
    """Worst relative defect of ``Lbar f = H^{-1} (Delta - W)(H f)`` over random ``f``."""
    lbar = weighted_laplacian(torus, factor, pairing).matrix
    lw = schrodinger_operator(torus, factor).matrix
    H = factor.H
    rng = np.random.default_rng(seed)
    f = rng.uniform(-1.0, 1.0, size=(torus.num_nodes, n_vectors))
    res = lbar @ f - (lw @ (H[:, None] * f)) / H[:, None]
    return float(np.max(np.max(np.abs(res), axis=0) / np.max(np.abs(f), axis=0)))
