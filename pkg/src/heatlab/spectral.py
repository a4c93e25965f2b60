"""Dense spectral oracle: heat kernels at real and complex time."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .grid_model import ConformalFactor, GridTorus
from .operators import GeneratorMatrix

__all__ = [
    "EigenSystem",
    "KernelMatrix",
    "eigendecompose",
    "kernel_at",
    "kernel_entries",
    "kernel_time_derivative",
    "compose",
    "gradient_magnitude",
]


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Eigenpairs of ``-A`` with eigenvectors orthonormal in ``l^2(measure)``.

    ``vectors[:, j]`` is ``u_j``; the kernel of ``exp(zA)`` relative to
    ``measure`` is ``sum_j exp(-lambda_j z) u_j(x) u_j(y)``.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    measure: np.ndarray
    tag: str
    name: str = ""

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    def truncate(self, lam_max: float) -> "EigenSystem":
        keep = self.eigenvalues <= lam_max
        return EigenSystem(self.eigenvalues[keep], self.vectors[:, keep], self.measure, self.tag, self.name)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Kernel values ``K(x, y)`` relative to ``measure`` at time ``z``.

    The operator matrix is ``values * measure[None, :]``.
    """

    values: np.ndarray
    measure: np.ndarray
    tag: str
    z: complex = 0.0

    @property
    def operator(self) -> np.ndarray:
        return self.values * self.measure[None, :]

    def symmetry_error(self) -> float:
        """``max |K - K^T| / max |K|``."""
        v = self.values
        return float(np.max(np.abs(v - v.T)) / np.max(np.abs(v)))

    def mass_defect(self) -> float:
        """``max_x |sum_y K(x, y) m(y) - 1|``."""
        return float(np.max(np.abs(self.values @ self.measure - 1.0)))

    def positivity_defect(self) -> float:
        """``max(0, -min K) / max K``; only meaningful at real time."""
        v = np.real(self.values)
        return float(max(0.0, -v.min()) / v.max())


def eigendecompose(generator: GeneratorMatrix, tol: float = 1e-10) -> EigenSystem:
    """Full eigendecomposition through the symmetrised matrix ``D^{1/2} A D^{-1/2}``."""
    m = np.asarray(generator.measure, dtype=float)
    r = np.sqrt(m)
    s = r[:, None] * generator.dense / r[None, :]
    scale = np.max(np.abs(s))
    asym = np.max(np.abs(s - s.T))
    if asym > tol * scale:
        raise ValueError(
            f"{generator.name}: symmetrised generator asymmetric by {asym:.3e} "
            f"(scale {scale:.3e}); assembly is not self-adjoint"
        )
    lam, v = sla.eigh(-0.5 * (s + s.T), driver="evd")
    u = v / r[:, None]
    return EigenSystem(lam, u, m, generator.tag, generator.name)


def _weights(es: EigenSystem, z) -> np.ndarray:
    z = complex(z)
    if z.real < 0 or (z.real == 0 and z != 0):
        raise ValueError(f"kernel needs Re z > 0 (or z = 0), got {z}")
    if z.imag == 0:
        return np.exp(-es.eigenvalues * z.real)
    return np.exp(-es.eigenvalues * z)


def kernel_at(es: EigenSystem, z) -> KernelMatrix:
    """Heat kernel ``exp(zA)`` relative to the eigensystem's measure."""
    if complex(z) == 0:
        return KernelMatrix(np.diag(1.0 / es.measure), es.measure, es.tag, 0.0)
    w = _weights(es, z)
    # modes below 1e-18 of the leading weight are invisible in double precision
    keep = int(np.searchsorted(-np.abs(w) / np.abs(w[0]), -1e-18, side="right"))
    u = es.vectors[:, : max(keep, 1)]
    return KernelMatrix((u * w[: u.shape[1]]) @ u.T, es.measure, es.tag, z)


def kernel_entries(es: EigenSystem, z, x, y) -> np.ndarray:
    """Selected kernel entries ``K_z(x_i, y_i)`` without forming the full matrix."""
    x, y = np.broadcast_arrays(np.asarray(x), np.asarray(y))
    u = es.vectors
    return (u[x] * u[y]) @ _weights(es, z)


def kernel_time_derivative(es: EigenSystem, t: float, k: int) -> KernelMatrix:
    """Exact ``d^k/dt^k`` of the real-time kernel."""
    if t <= 0 or k < 0:
        raise ValueError("need t > 0 and k >= 0")
    lam = es.eigenvalues
    w = (-lam) ** k * np.exp(-lam * t)
    u = es.vectors
    return KernelMatrix((u * w) @ u.T, es.measure, es.tag, t)


def compose(k1: KernelMatrix, k2: KernelMatrix) -> KernelMatrix:
    """``(K1 o_m K2)(x, y) = sum_w K1(x, w) K2(w, y) m(w)``."""
    if k1.tag != k2.tag:
        raise ValueError("kernels refer to different measures")
    return KernelMatrix(k1.operator @ k2.values, k1.measure, k1.tag, k1.z + k2.z)


def gradient_magnitude(
    torus: GridTorus,
    kernel,
    y: int,
    metric_tag: str = "g",
    factor: ConformalFactor | None = None,
) -> np.ndarray:
    """Forward-difference gradient norm of ``x -> K(x, y)``.

    ``metric_tag="g_tilde"`` measures the norm in the conformal metric
    ``h g``, which rescales the flat norm by ``h^{-1/2}``.
    """
    vals = kernel.values if isinstance(kernel, KernelMatrix) else np.asarray(kernel)
    col = np.real(vals[:, y])
    nodes = np.arange(torus.num_nodes)
    g2 = np.zeros(torus.num_nodes)
    for axis in range(torus.n):
        g2 += ((col[torus.shift(nodes, axis)] - col) / torus.dx) ** 2
    g = np.sqrt(g2)
    if metric_tag == "g":
        return g
    if metric_tag == "g_tilde":
        if factor is None:
            raise ValueError("metric g_tilde needs the conformal factor")
        return g / np.sqrt(factor.h)
    raise ValueError(f"unknown metric tag {metric_tag!r}")
