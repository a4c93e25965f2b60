"""Duhamel/Dyson series for the conformally perturbed heat kernel.

With ``phi = 1 - h`` the perturbed kernel is ``sum_k d^k/dt^k beta^k_t`` where

    beta^0_z = pbar_z,
    beta^k_z = z int_0^1 sum_w pbar_{(1-v)z}(x, w) beta^{k-1}_{vz}(w, y) phi(w) mubar(w) dv,

and the t-derivatives are taken by the Cauchy formula on the circle of radius
``t sin(pi/4)`` around ``t``.  Two evaluators are provided:

* ``duhamel_term`` is the recursion written out literally in node space, with
  Gauss-Legendre quadrature in ``v``.  It needs ``beta^{k-1}`` at ``Q`` scaled
  times per level, so its cost grows like ``Q^k``; it is kept as a reference.
* ``DysonSeries`` works in the eigenbasis of the weighted Laplacian, truncated
  to modes with ``lambda <= mode_cutoff / t``.  Along each ray ``z = |z| w``
  every order is collocated on Chebyshev-Lobatto points, so the ``v`` integral
  becomes a fixed matrix acting on interpolated values and all orders share
  one set of nodes.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .grid_model import ConformalFactor, GridTorus
from .operators import conformal_laplacian, weighted_laplacian
from .spectral import EigenSystem, KernelMatrix, eigendecompose, kernel_at

__all__ = [
    "CauchyCircle",
    "DysonConfig",
    "DysonTerm",
    "DysonDivergence",
    "TailReport",
    "TermStack",
    "DysonSeries",
    "duhamel_term",
    "literal_terms",
    "cauchy_derivative",
    "dyson_sum",
    "heat_residual",
    "initial_condition_check",
]


class DysonDivergence(RuntimeError):
    """Term ratios stayed at or above one; the amplitude is past the convergence radius."""


@dataclass(frozen=True)
class CauchyCircle:
    """Circle ``|z - t| = t sin(pi/4)`` sampled at ``M`` equispaced angles."""

    t: float
    M: int = 64

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("circle centre must be positive")
        if self.M < 16 or self.M % 2:
            raise ValueError(f"need an even number of points >= 16, got {self.M}")

    @property
    def radius(self) -> float:
        return self.t * math.sin(math.pi / 4)

    @property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.M) / self.M

    @property
    def nodes(self) -> np.ndarray:
        return self.t + self.radius * np.exp(1j * self.angles)

    def weights(self, k: int) -> np.ndarray:
        """Trapezoid weights turning circle samples into the k-th derivative at ``t``."""
        return math.factorial(k) / (self.M * self.radius**k) * np.exp(-1j * k * self.angles)


def cauchy_derivative(values, circle: CauchyCircle, k: int, warn_tol: float = 1e-8):
    """k-th derivative at the circle centre from samples ``values[m] = f(z_m)``.

    ``values`` may also be a callable evaluated at the circle nodes.  The
    result of a real-analytic ``f`` is real; a large imaginary part means the
    circle is under-resolved and triggers a warning.

    >>> c = CauchyCircle(1.0, 64)
    >>> d = cauchy_derivative(np.exp(-c.nodes), c, 3)
    >>> bool(abs(d + np.exp(-1.0)) < 1e-12)
    True
    """
    if callable(values):
        values = np.stack([np.asarray(values(z)) for z in circle.nodes])
    values = np.asarray(values)
    if values.shape[0] != circle.M:
        raise ValueError("need one sample per circle node")
    res = np.tensordot(circle.weights(k), values, axes=1)
    big = np.max(np.abs(res))
    if big > 0 and np.max(np.abs(res.imag)) > warn_tol * big:
        warnings.warn(
            f"Cauchy derivative of order {k} has relative imaginary part "
            f"{np.max(np.abs(res.imag)) / big:.2e}; increase M",
            RuntimeWarning,
            stacklevel=2,
        )
    return res.real


@dataclass(frozen=True)
class DysonConfig:
    """Numerical parameters of the series.

    K, Q, M
        maximal order, Gauss-Legendre nodes in ``v``, circle points.
    r_stop
        stop once ``r_k * max|term_k| < r_stop * max|partial sum|``.
    ray_nodes
        polynomial degree of the collocation along each ray.
    mode_cutoff
        keep eigenmodes with ``lambda * t <= mode_cutoff``.
    """

    K: int = 12
    Q: int = 16
    M: int = 64
    r_stop: float = 1e-12
    ray_nodes: int = 18
    mode_cutoff: float = 26.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.Q < 8:
            raise ValueError("Q must be >= 8")
        if self.M < 32 or self.M % 2:
            raise ValueError("M must be even and >= 32")
        if self.ray_nodes < 4:
            raise ValueError("ray_nodes must be >= 4")
        if self.mode_cutoff <= 0:
            raise ValueError("mode_cutoff must be positive")


@dataclass(frozen=True, eq=False)
class DysonTerm:
    """``beta^k_z`` as a node-space kernel relative to ``mu_bar``."""

    order: int
    z: complex
    values: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass
class TailReport:
    ratios: list[float]
    term_max: list[float]
    tail_bound: float
    ratio_constant: float | None
    orders_used: int
    mode_count: int
    quadrature_check: float
    error_vs_oracle: float | None = None

    def to_dict(self) -> dict:
        return {
            "ratios": [float(r) for r in self.ratios],
            "term_max": [float(r) for r in self.term_max],
            "tail_bound": float(self.tail_bound),
            "fitted_C": None if self.ratio_constant is None else float(self.ratio_constant),
            "orders_used": int(self.orders_used),
            "mode_count": int(self.mode_count),
            "quadrature_check": float(self.quadrature_check),
            "error_vs_oracle": None if self.error_vs_oracle is None else float(self.error_vs_oracle),
        }


# ---------------------------------------------------------------------------
# literal node-space recursion


def _gauss_legendre01(q: int):
    x, w = np.polynomial.legendre.leggauss(q)
    return 0.5 * (x + 1), 0.5 * w


def duhamel_term(
    prev: Callable[[complex], np.ndarray],
    z: complex,
    eigensystem: EigenSystem,
    factor: ConformalFactor,
    config: DysonConfig = DysonConfig(),
    order: int | None = None,
) -> DysonTerm:
    """One step of the recursion with the ``w`` sum done exactly.

    ``prev(tau)`` returns ``beta^{k-1}_tau`` (node space, relative to
    ``mu_bar``) at the scaled times ``tau = v_q z``.
    """
    z = complex(z)
    v, w = _gauss_legendre01(config.Q)
    if np.any(((1 - v) * z).real <= 0):
        raise ValueError(f"Re((1 - v) z) must be positive, z = {z}")
    weight = factor.phi * factor.mu_bar
    acc = 0
    for vq, wq in zip(v, w):
        pz = kernel_at(eigensystem, (1 - vq) * z).values
        b = np.asarray(prev(vq * z))
        acc = acc + wq * (pz * weight[None, :]) @ b
    return DysonTerm(order if order is not None else -1, z, z * acc)


def literal_terms(
    eigensystem: EigenSystem, factor: ConformalFactor, z: complex, K: int, config=DysonConfig()
) -> list[DysonTerm]:
    """``beta^0..beta^K`` at ``z`` by the literal recursion with a per-time cache."""
    cache: dict = {}

    def key(k, tau):
        return k, round(tau.real, 12), round(tau.imag, 12)

    def beta(k, tau):
        tau = complex(tau)
        kk = key(k, tau)
        if kk not in cache:
            if k == 0:
                cache[kk] = kernel_at(eigensystem, tau).values
            else:
                cache[kk] = duhamel_term(
                    lambda s: beta(k - 1, s), tau, eigensystem, factor, config, k
                ).values
        return cache[kk]

    return [DysonTerm(k, complex(z), beta(k, z)) for k in range(K + 1)]


# ---------------------------------------------------------------------------
# collocation engine


def _lobatto(S: int):
    xs = 0.5 * (1 - np.cos(np.pi * np.arange(S + 1) / S))
    bw = (-1.0) ** np.arange(S + 1)
    bw[0] *= 0.5
    bw[-1] *= 0.5
    return xs, bw


def _interp_matrix(xs, bw, xe):
    """Barycentric interpolation from nodes ``xs`` to points ``xe``."""
    diff = xe[:, None] - xs[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15)
    diff[exact] = 1.0
    c = bw[None, :] / diff
    mat = c / c.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    mat[rows] = exact[rows].astype(float)
    return mat


def _collocation_matrix(S: int, Q: int) -> np.ndarray:
    """``Iw[i, l]``: Gauss-Legendre integral over ``[0, s_i]`` of the interpolant, per unit ``s_i``."""
    xs, bw = _lobatto(S)
    v, w = _gauss_legendre01(Q)
    return np.stack([w @ _interp_matrix(xs, bw, v * x) for x in xs])


@dataclass(frozen=True, eq=False)
class TermStack:
    """``d^k/dt^k beta^k_t`` for ``k = 0..K``.

    Order 0 is kept in the full eigenbasis (a vector of weights); higher
    orders live on the truncated basis ``vectors[:, :m]``.
    """

    t: float
    es: EigenSystem
    order0: np.ndarray
    coeffs: np.ndarray
    mode_count: int

    @property
    def K(self) -> int:
        return self.coeffs.shape[0]

    @cached_property
    def term_max(self) -> list[float]:
        return [float(np.max(np.abs(self.node(k)))) for k in range(self.K + 1)]

    def node(self, k: int) -> np.ndarray:
        u = self.es.vectors
        if k == 0:
            return (u * self.order0) @ u.T
        um = u[:, : self.mode_count]
        return um @ self.coeffs[k - 1] @ um.T

    def partial_sum(self, K: int | None = None) -> np.ndarray:
        K = self.K if K is None else min(K, self.K)
        u = self.es.vectors
        out = (u * self.order0) @ u.T
        if K >= 1:
            um = u[:, : self.mode_count]
            out += um @ self.coeffs[:K].sum(axis=0) @ um.T
        return out


class DysonSeries:
    """Series evaluator bound to one torus, conformal factor and configuration."""

    def __init__(
        self,
        torus: GridTorus,
        factor: ConformalFactor,
        config: DysonConfig = DysonConfig(),
        eigensystem: EigenSystem | None = None,
    ):
        self.torus = torus
        self.factor = factor
        self.config = config
        if eigensystem is None:
            eigensystem = eigendecompose(weighted_laplacian(torus, factor))
        if eigensystem.tag != "mu_bar":
            raise ValueError("the series is built on the weighted Laplacian eigensystem")
        self.es = eigensystem
        self._weight = factor.phi * factor.mu_bar
        S = config.ray_nodes
        self._xs = _lobatto(S)[0]
        self._iw = _collocation_matrix(S, config.Q)

    @cached_property
    def quadrature_check(self) -> float:
        """Change of the collocation matrix under ``Q -> 2Q``."""
        iw2 = _collocation_matrix(self.config.ray_nodes, 2 * self.config.Q)
        return float(np.max(np.abs(iw2 - self._iw)))

    def basis(self, scale: float):
        """Eigenmodes with ``lambda * scale <= mode_cutoff`` and the projected perturbation."""
        m = int(np.searchsorted(self.es.eigenvalues, self.config.mode_cutoff / scale, side="right"))
        m = max(m, 1)
        lam = self.es.eigenvalues[:m]
        u = self.es.vectors[:, :m]
        phi_nodes = self.factor.phi
        if np.all(phi_nodes == phi_nodes[0]):
            # constant phi: the projection is phi_0 times the identity
            return lam, phi_nodes[0] * np.eye(m), True
        phi = u.T @ (self._weight[:, None] * u)
        phi = 0.5 * (phi + phi.T)
        diagonal = False
        return lam, phi, diagonal

    def _ray(self, z: complex, K: int, lam, phi, diagonal: bool) -> list[np.ndarray]:
        """Eigenbasis ``beta^k_z`` for ``k = 1..K`` by collocation along ``[0, z]``."""
        R = abs(z)
        om = z / R
        s = R * self._xs
        E = np.exp(-om * np.outer(s, lam))
        m = lam.size
        if diagonal:
            # every order stays diagonal; carry the diagonals only
            pd = np.diag(phi)
            b = E
            out = []
            for _ in range(K):
                b = (self._iw @ (pd * b / E)) * (om * s)[:, None] * E
                out.append(np.diag(b[-1]))
            return out
        B = E[:, :, None] * np.eye(m)[None]
        iu = np.triu_indices(m, 1)
        out = []
        for k in range(1, K + 1):
            # real GEMM on the interleaved (re, im) view; B is C-contiguous
            Y = np.matmul(phi, B.view(np.float64)).view(np.complex128)
            G = Y / E[:, :, None]
            if k < K:
                B = (self._iw @ G.reshape(s.size, -1)).reshape(s.size, m, m)
                B *= (om * s)[:, None, None] * E[:, :, None]
                # collocation is accurate where the row eigenvalue is the smaller one
                B[:, iu[1], iu[0]] = B[:, iu[0], iu[1]]
                out.append(B[-1].copy())
            else:
                last = (self._iw[-1] @ G.reshape(s.size, -1)).reshape(m, m)
                last *= z * E[-1][:, None]
                last[iu[1], iu[0]] = last[iu[0], iu[1]]
                out.append(last)
        return out

    def terms(self, z: complex, K: int | None = None) -> list[DysonTerm]:
        """``beta^k_z`` in node space for ``k = 0..K``."""
        K = self.config.K if K is None else K
        z = complex(z)
        if z.real <= 0:
            raise ValueError("need Re z > 0")
        lam, phi, diagonal = self.basis(z.real)
        u = self.es.vectors[:, : lam.size]
        res = [DysonTerm(0, z, kernel_at(self.es, z).values)]
        for k, b in enumerate(self._ray(z, K, lam, phi, diagonal), start=1):
            vals = u @ b @ u.T
            res.append(DysonTerm(k, z, vals.real if z.imag == 0 else vals))
        return res

    def derivative_terms(self, t: float) -> TermStack:
        """Cauchy-circle derivatives ``d^k/dt^k beta^k_t``.

        The real operators make ``beta_{conj z} = conj(beta_z)``, so only the
        upper half of the circle is evaluated and the conjugate half is folded
        into a real accumulation.
        """
        cfg = self.config
        circle = CauchyCircle(t, cfg.M)
        M = cfg.M
        # one basis for the whole circle keeps every sample analytic in z
        lam, phi, diagonal = self.basis(t)
        m = lam.size
        acc = np.zeros((cfg.K, m, m))
        for j in range(M // 2 + 1):
            z = circle.nodes[j]
            if j in (0, M // 2):
                z = complex(z.real, 0.0)
            mult = 1.0 if j in (0, M // 2) else 2.0
            for k, b in enumerate(self._ray(z, cfg.K, lam, phi, diagonal), start=1):
                acc[k - 1] += mult * (np.exp(-1j * k * circle.angles[j]) * b).real
        scale = np.array(
            [math.factorial(k) / (M * circle.radius**k) for k in range(1, cfg.K + 1)]
        )
        coeffs = acc * scale[:, None, None]
        order0 = np.mean(np.exp(-np.outer(circle.nodes, self.es.eigenvalues)), axis=0).real
        return TermStack(t, self.es, order0, coeffs, m)

    def tail_report(self, stack: TermStack) -> TailReport:
        tm = stack.term_max
        ratios = [tm[k] / tm[k - 1] if tm[k - 1] > 0 else 0.0 for k in range(1, len(tm))]
        total = max(tm[0], 1e-300)
        used = len(ratios)
        for k, r in enumerate(ratios, start=1):
            if r * tm[k] < self.config.r_stop * total:
                used = k
                break
        streak = 0
        for k, r in enumerate(ratios[:used], start=1):
            streak = streak + 1 if r >= 1 else 0
            if streak >= 3:
                raise DysonDivergence(
                    f"term ratios >= 1 for orders {k - 2}..{k} "
                    f"(ratios {', '.join(f'{x:.3g}' for x in ratios[:k])}); "
                    f"|phi|_inf = {self.factor.phi_inf:.3g} is beyond the convergence radius"
                )
        rK = ratios[used - 1] if used else 0.0
        tail = rK / (1 - rK) * tm[used] if rK < 1 else math.inf
        a = self.factor.phi_inf
        late = [r for r in ratios[used // 2 : used] if r > 0]
        const = float(np.median(late)) / (math.sqrt(2) * a) if a > 0 and late else None
        return TailReport(ratios, tm, tail, const, used, stack.mode_count, self.quadrature_check)

    def sum(self, t: float) -> tuple[KernelMatrix, TailReport]:
        stack = self.derivative_terms(t)
        report = self.tail_report(stack)
        values = stack.partial_sum(report.orders_used)
        return KernelMatrix(values, self.factor.mu_tilde, "mu_tilde", t), report


def dyson_sum(
    torus: GridTorus,
    factor: ConformalFactor,
    t: float,
    config: DysonConfig = DysonConfig(),
    eigensystem: EigenSystem | None = None,
) -> tuple[KernelMatrix, TailReport]:
    """Truncated series for the kernel of ``exp(t Delta_tilde)`` relative to ``mu_tilde``.

    The ``beta`` kernels are taken against ``mu_bar``; their derivative sum is
    already the kernel of ``exp(t Delta_tilde)`` against ``mu_tilde = h mu_bar``
    because the operator series sums to ``exp(t Delta_tilde) h^{-1}``.
    """
    if factor.phi_inf == 0:
        es = eigensystem or eigendecompose(weighted_laplacian(torus, factor))
        k = kernel_at(es, t)
        rep = TailReport([], [float(np.max(k.values))], 0.0, None, 0, es.size, 0.0)
        return KernelMatrix(k.values, factor.mu_tilde, "mu_tilde", t), rep
    return DysonSeries(torus, factor, config, eigensystem).sum(t)


def heat_residual(
    torus: GridTorus,
    factor: ConformalFactor,
    u: Callable[[float], np.ndarray],
    t: float,
    eps: float = 1e-4,
) -> float:
    """Relative defect of ``du/dt = Delta_tilde u`` with central differences in ``t``."""
    lt = conformal_laplacian(torus, factor).matrix
    um, u0, up = u(t - eps), u(t), u(t + eps)
    lu = lt @ u0
    return float(np.max(np.abs((up - um) / (2 * eps) - lu)) / np.max(np.abs(lu)))


@dataclass
class InitialConditionReport:
    times: list[float]
    offdiag_sup: list[float]
    masses: list[float]
    shrink_factors: list[float] = field(default_factory=list)

    @property
    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.offdiag_sup, self.offdiag_sup[1:]))

    @property
    def mass_defect(self) -> float:
        return float(max(abs(m - 1) for m in self.masses))


def initial_condition_check(
    torus: GridTorus,
    factor: ConformalFactor,
    u: Callable[[float], np.ndarray],
    y: int,
    t0: float,
    eps0: float | None = None,
    levels: int = 3,
) -> InitialConditionReport:
    """Delta-approach of ``u_t(., y)`` along ``t0, t0/4, t0/16, ...``.

    Tracks the sup of ``|u_t(x, y)|`` over ``d(x, y) >= eps0`` and the mass
    ``sum_x u_t(x, y) h(x) mubar(x)``.
    """
    eps0 = torus.L / 4 if eps0 is None else eps0
    far = torus.distances_from(y) >= eps0 - 1e-12
    times = [t0 / 4**j for j in range(levels)]
    sups, masses = [], []
    for t in times:
        col = np.real(u(t)[:, y])
        sups.append(float(np.max(np.abs(col[far]))))
        masses.append(float(np.sum(col * factor.mu_tilde)))
    shrink = [a / b if b > 0 else math.inf for a, b in zip(sups, sups[1:])]
    return InitialConditionReport(times, sups, masses, shrink)
