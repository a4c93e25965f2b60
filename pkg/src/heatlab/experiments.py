"""Config-driven experiment runners shared by the command line and the corpus."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .dyson import DysonConfig, dyson_sum
from .grid_model import FactorFamily, GridTorus, build_torus, make_factor
from .harness import (
    ALPHA_GRID,
    FIT_PAIRS,
    COARSE_FRACTIONAL_WINDOW,
    COARSE_WINDOW,
    CONTINUUM_WINDOW,
    FRACTIONAL_WINDOW,
    BoundReport,
    Window,
    comparison_check,
    complex_time_report,
    conformal_bound_report,
    gaussian_envelope_fit,
    gradient_bound_report,
    gradient_decay_slope,
    sample_window,
    window_times,
)
from .operators import conformal_laplacian, doob_residual, schrodinger_operator, weighted_laplacian
from .spectral import eigendecompose, kernel_at
from .subordination import fractional_bound_report, fractional_kernel_spectral, subordinate_kernel

__all__ = ["Check", "ExperimentResult", "EXPERIMENTS", "run_experiment", "pick_window"]

DEFAULT_NUMERIC: dict[str, Any] = {
    "K": 12,
    "M": 64,
    "Q": 16,
    "ray_nodes": 18,
    "mode_cutoff": 26.0,
    "sigma": 0.5,
    "theta0": math.pi / 4,
    "alpha_grid": None,
    "seed": 0,
    "t": 0.05,
    "times": None,
    "amplitudes": [0.05, 0.1, 0.2, 0.3],
    "n_pairs": FIT_PAIRS,
    "window": "auto",
    "dyson_tolerance": 1e-6,
}


@dataclass
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool

    def to_dict(self) -> dict:
        v = float(self.value)
        return {
            "value": v if math.isfinite(v) else None,
            "tolerance": float(self.tolerance),
            "passed": bool(self.passed),
        }


def _check(name: str, value: float, tol: float) -> Check:
    return Check(name, float(value), tol, bool(value <= tol))


@dataclass
class ExperimentResult:
    name: str
    reports: list[BoundReport] = field(default_factory=list)
    checks: list[Check] = field(default_factory=list)
    metrics: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def pick_window(torus: GridTorus, choice: str = "auto", fractional: bool = False) -> Window:
    """Continuum-like window when it is non-empty on this grid, the two-cell variant otherwise."""
    full, coarse = (FRACTIONAL_WINDOW, COARSE_FRACTIONAL_WINDOW) if fractional else (
        CONTINUUM_WINDOW,
        COARSE_WINDOW,
    )
    if choice == "continuum":
        return full
    if choice == "coarse":
        return coarse
    lo_t, hi_t = full.time_range(torus)
    lo_d, hi_d = full.distance_range(torus)
    return full if (lo_t <= hi_t and lo_d <= hi_d) else coarse


def _setup(cfg: dict):
    g = cfg["grid"]
    torus = build_torus(g["n"], g["N"], g.get("L", 1.0))
    fc = cfg.get("factor", {})
    params = dict(fc.get("params", {}))
    if "center" in params and params["center"] is not None:
        params["center"] = tuple(params["center"])
    family = FactorFamily(fc.get("kind", "sinusoidal"), fc.get("amplitude", 0.1), **params)
    return torus, family, make_factor(torus, family), params


def _numeric(cfg: dict) -> dict:
    num = dict(DEFAULT_NUMERIC)
    num.update(cfg.get("numeric", {}))
    return num


def _samples(torus, num, window, diffusion_exponent=1.0):
    times = num["times"]
    if times is None:
        times = window_times(torus, window, 6, diffusion_exponent)
    return sample_window(
        torus, window, times, n_pairs=num["n_pairs"], seed=num["seed"],
        diffusion_exponent=diffusion_exponent,
    )


def _kernel_checks(res: ExperimentResult, label: str, kernel, conservative: bool = True):
    res.checks.append(_check(f"{label}_symmetry", kernel.symmetry_error(), 1e-9))
    if conservative:
        res.checks.append(_check(f"{label}_mass", kernel.mass_defect(), 1e-8))


def _published(res: ExperimentResult, report: BoundReport):
    consts = [v for v in report.constants.values() if isinstance(v, float)]
    ok = all(math.isfinite(v) and v > 0 for v in consts) and report.samples["count"] >= 500
    res.checks.append(Check(f"{report.inequality}_published", float(not ok), 0.0, ok))
    res.reports.append(report)


def run_doob(cfg: dict) -> ExperimentResult:
    torus, _, factor, _ = _setup(cfg)
    num = _numeric(cfg)
    res = ExperimentResult("doob")
    r = doob_residual(torus, factor, seed=num["seed"])
    es_b = eigendecompose(weighted_laplacian(torus, factor))
    es_w = eigendecompose(schrodinger_operator(torus, factor))
    HH = np.outer(factor.H, factor.H)
    times = num["times"] or [0.01, 0.1, 1.0]
    errs = []
    for t in times:
        pb = kernel_at(es_b, t).values * HH
        pw = kernel_at(es_w, t).values
        errs.append(float(np.max(np.abs(pb - pw)) / np.max(np.abs(pw))))
        if t == times[0]:
            _kernel_checks(res, "pbar", kernel_at(es_b, t))
    res.checks += [_check("doob_residual", r, 1e-11), _check("doob_kernel_identity", max(errs), 1e-9)]
    res.metrics.update(doob_residual=r, kernel_identity_error=max(errs), times=list(times))
    res.reports.append(
        BoundReport(
            inequality="doob_transform",
            constants={"doob_residual": r, "kernel_identity_error": max(errs)},
            max_ratio=max(errs),
            samples={"count": torus.num_nodes**2 * len(times), "grid": {"n": torus.n, "N": torus.N, "L": torus.L}},
            window={"times": list(times)},
            seed=num["seed"],
        )
    )
    return res


def run_envelope(cfg: dict) -> ExperimentResult:
    torus, _, factor, _ = _setup(cfg)
    num = _numeric(cfg)
    res = ExperimentResult("envelope")
    window = pick_window(torus, num["window"])
    smp = _samples(torus, num, window)
    es_b = eigendecompose(weighted_laplacian(torus, factor))
    _kernel_checks(res, "pbar", kernel_at(es_b, float(smp.t[0])))
    _published(res, gaussian_envelope_fit(torus, es_b, smp, window=window))
    _published(res, comparison_check(es_b, 0.5, 1.0, smp, window=window))
    return res


def run_conformal(cfg: dict) -> ExperimentResult:
    torus, family, _, params = _setup(cfg)
    num = _numeric(cfg)
    res = ExperimentResult("conformal")
    window = pick_window(torus, num["window"])
    smp = _samples(torus, num, window)
    grid = num["alpha_grid"] if num["alpha_grid"] is not None else ALPHA_GRID
    rep = conformal_bound_report(torus, family.kind, num["amplitudes"], smp, grid, params, window)
    res.metrics.update(Q=rep.details["Q"], fit_residual=rep.details["fit_residual"])
    _published(res, rep)
    return res


def run_dyson(cfg: dict) -> ExperimentResult:
    torus, _, factor, _ = _setup(cfg)
    num = _numeric(cfg)
    res = ExperimentResult("dyson")
    dc = DysonConfig(K=num["K"], Q=num["Q"], M=num["M"], ray_nodes=num["ray_nodes"],
                     mode_cutoff=num["mode_cutoff"])
    t = num["t"]
    kern, tail = dyson_sum(torus, factor, t, dc)
    oracle = kernel_at(eigendecompose(conformal_laplacian(torus, factor)), t).values
    err = float(np.max(np.abs(kern.values - oracle)) / np.max(np.abs(oracle)))
    tail.error_vs_oracle = err
    res.checks.append(_check("error_vs_oracle", err, num["dyson_tolerance"]))
    _kernel_checks(res, "dyson_sum", kern)
    # amplitude past which the fitted ratio bound exceeds one on this grid
    c = tail.ratio_constant
    threshold = 1 / (math.sqrt(2) * c) if c else None
    res.metrics.update(error_vs_oracle=err, tail=tail.to_dict(), t=t, divergence_threshold=threshold)
    res.reports.append(
        BoundReport(
            inequality="dyson_series",
            constants={"ratio_constant": tail.ratio_constant or 0.0},
            max_ratio=err,
            samples={"count": torus.num_nodes**2, "grid": {"n": torus.n, "N": torus.N, "L": torus.L}},
            window={"t": t},
            seed=num["seed"],
            details=tail.to_dict(),
        )
    )
    return res


def run_gradient(cfg: dict) -> ExperimentResult:
    torus, _, factor, _ = _setup(cfg)
    num = _numeric(cfg)
    res = ExperimentResult("gradient")
    window = pick_window(torus, num["window"])
    smp = _samples(torus, num, window)
    rep = gradient_bound_report(torus, factor, smp, window=window)
    es_t = eigendecompose(conformal_laplacian(torus, factor))
    # periodic images steepen the decay past (L/6)^2; keep the short window when it exists
    short = Window(window.t_min_cells, 1 / 6, window.d_min_cells)
    lo, hi = short.time_range(torus)
    slope, _ = gradient_decay_slope(torus, es_t, window_times(torus, short if lo <= hi else window, 8))
    rep.details["sup_gradient_slope"] = slope
    res.metrics.update(slope=slope)
    _published(res, rep)
    return res


def run_fractional(cfg: dict) -> ExperimentResult:
    torus, _, factor, _ = _setup(cfg)
    num = _numeric(cfg)
    res = ExperimentResult("fractional")
    sigma, t = num["sigma"], num["t"]
    es_t = eigendecompose(conformal_laplacian(torus, factor))
    spec = fractional_kernel_spectral(es_t, sigma, t)
    sub = subordinate_kernel(es_t, sigma, t)
    gap = float(np.max(np.abs(spec.values - sub.values)) / np.max(np.abs(spec.values)))
    res.checks.append(_check("two_route_agreement", gap, 1e-5))
    _kernel_checks(res, "fractional_spectral", spec)
    _kernel_checks(res, "fractional_subordinated", sub)
    window = pick_window(torus, num["window"], fractional=True)
    times = num["times"] or window_times(torus, window, 6, 1 / sigma)
    rep = fractional_bound_report(es_t, torus, sigma, times, window, num["n_pairs"], num["seed"])
    res.metrics.update(two_route_agreement=gap)
    _published(res, rep)
    return res


def run_complex_time(cfg: dict) -> ExperimentResult:
    torus, _, factor, _ = _setup(cfg)
    num = _numeric(cfg)
    res = ExperimentResult("complex_time")
    window = pick_window(torus, num["window"])
    smp = _samples(torus, num, window)
    es_b = eigendecompose(weighted_laplacian(torus, factor))
    rep = complex_time_report(es_b, num["theta0"], smp, window=window)
    curve = [v["C"] for v in rep.details["curve"].values()]
    mono = all(b >= a for a, b in zip(curve, curve[1:]))
    res.checks.append(Check("complex_curve_monotone", float(not mono), 0.0, mono))
    _published(res, rep)
    return res


EXPERIMENTS = {
    "doob": run_doob,
    "envelope": run_envelope,
    "conformal": run_conformal,
    "dyson": run_dyson,
    "gradient": run_gradient,
    "fractional": run_fractional,
    "complex_time": run_complex_time,
}


def run_experiment(cfg: dict) -> list[ExperimentResult]:
    name = cfg["experiment"]
    names = list(EXPERIMENTS) if name == "all" else [name]
    return [EXPERIMENTS[n](cfg) for n in names]
