import math
import types
import warnings

import numpy as np
import pytest
import scipy.linalg as sla

from heatlab.dyson import (
    CauchyCircle,
    DysonConfig,
    DysonDivergence,
    DysonSeries,
    cauchy_derivative,
    duhamel_term,
    dyson_sum,
    heat_residual,
    initial_condition_check,
    literal_terms,
)
from heatlab.grid_model import FactorFamily, build_torus, make_factor
from heatlab.operators import conformal_laplacian, weighted_laplacian
from heatlab.spectral import eigendecompose, kernel_at, kernel_time_derivative

FULL = DysonConfig(K=4, mode_cutoff=1e9)


def van_loan(torus, factor, z, K):
    """``beta^0..beta^K`` from one block-bidiagonal matrix exponential."""
    A = weighted_laplacian(torus, factor).dense
    m = A.shape[0]
    big = np.zeros(((K + 1) * m, (K + 1) * m), dtype=complex)
    for i in range(K + 1):
        big[i * m : (i + 1) * m, i * m : (i + 1) * m] = A
        if i < K:
            big[i * m : (i + 1) * m, (i + 1) * m : (i + 2) * m] = np.diag(factor.phi)
    E = sla.expm(z * big)
    return [E[:m, k * m : (k + 1) * m] / factor.mu_bar[None, :] for k in range(K + 1)]


@pytest.fixture(scope="module")
def small():
    tor = build_torus(1, 12)
    f = make_factor(tor, FactorFamily("sinusoidal", 0.3))
    return tor, f, eigendecompose(weighted_laplacian(tor, f))


@pytest.mark.parametrize("z", [0.05, 0.05 + 0.03j])
def test_literal_recursion_matches_block_exponential(small, z):
    tor, f, es = small
    ref = van_loan(tor, f, z, 3)
    lit = literal_terms(es, f, z, 3)
    for k in range(4):
        assert np.max(np.abs(lit[k].values - ref[k])) <= 1e-10 * np.max(np.abs(ref[0]))


@pytest.mark.parametrize("z", [0.05, 0.04 + 0.02j, 0.02 - 0.02j])
def test_engine_matches_block_exponential(small, z):
    tor, f, es = small
    ref = van_loan(tor, f, z, 4)
    terms = DysonSeries(tor, f, FULL, es).terms(z, 4)
    for k in range(5):
        assert np.max(np.abs(terms[k].values - ref[k])) <= 1e-10 * np.max(np.abs(ref[0]))


def test_engine_on_3d_against_literal():
    tor = build_torus(3, 4)
    f = make_factor(tor, FactorFamily("bump", 0.2, width=0.3))
    es = eigendecompose(weighted_laplacian(tor, f))
    lit = literal_terms(es, f, 0.05, 2)
    eng = DysonSeries(tor, f, DysonConfig(K=2, mode_cutoff=1e9), es).terms(0.05, 2)
    for a, b in zip(lit, eng):
        assert np.max(np.abs(a.values - b.values)) <= 1e-10 * np.max(np.abs(lit[0].values))


def test_zero_phi_terms_vanish(small):
    tor, _, _ = small
    f0 = make_factor(tor, FactorFamily("constant", 0.0))
    es = eigendecompose(weighted_laplacian(tor, f0))
    for term in DysonSeries(tor, f0, FULL, es).terms(0.05, 3)[1:]:
        assert term.max_abs == 0.0
    kern, rep = dyson_sum(tor, f0, 0.05)
    np.testing.assert_array_equal(kern.values, kernel_at(es, 0.05).values)
    assert rep.orders_used == 0


@pytest.mark.parametrize("engine", ["literal", "collocation"])
def test_constant_phi_closed_forms(engine):
    eps, t = 0.1, 0.05
    tor = build_torus(2, 6)
    f = make_factor(tor, FactorFamily("constant", eps))
    es = eigendecompose(weighted_laplacian(tor, f))
    if engine == "literal":
        terms = literal_terms(es, f, t, 2)
    else:
        terms = DysonSeries(tor, f, DysonConfig(K=2, mode_cutoff=1e9), es).terms(t, 2)
    p = kernel_at(es, t).values
    assert np.max(np.abs(terms[1].values - eps * t * p)) <= 1e-8 * np.max(p) * eps * t
    assert np.max(np.abs(terms[2].values - eps**2 * t**2 / 2 * p)) <= 1e-8 * np.max(p) * eps**2 * t**2


def test_duhamel_rejects_bad_direction(small):
    tor, f, es = small
    with pytest.raises(ValueError):
        duhamel_term(lambda s: kernel_at(es, s).values, -0.1, es, f)


def test_cauchy_scalar_calibration():
    circ = CauchyCircle(1.0, 64)
    vals = np.exp(-circ.nodes)
    for k in range(7):
        assert abs(cauchy_derivative(vals, circ, k) - (-1) ** k * math.exp(-1)) <= 1e-10 * math.exp(-1)
    assert circ.radius == pytest.approx(math.sin(math.pi / 4))


def test_cauchy_polynomial_exact():
    circ = CauchyCircle(0.7, 32)
    assert cauchy_derivative(lambda z: z**3, circ, 3) == pytest.approx(6.0, abs=1e-12)
    with warnings.catch_warnings():
        # an exactly vanishing derivative leaves only round-off, real and imaginary alike
        warnings.simplefilter("ignore", RuntimeWarning)
        assert cauchy_derivative(lambda z: z**3, circ, 4) == pytest.approx(0.0, abs=1e-10)


def test_cauchy_mean_value_and_first_derivative(small):
    tor, _, _ = small
    eps, t = 0.1, 0.05
    f = make_factor(tor, FactorFamily("constant", eps))
    es = eigendecompose(weighted_laplacian(tor, f))
    circ = CauchyCircle(t, 64)
    p0 = cauchy_derivative(lambda z: kernel_at(es, z).values, circ, 0)
    assert np.max(np.abs(p0 - kernel_at(es, t).values)) <= 1e-9 * np.max(p0)
    d1 = cauchy_derivative(lambda z: literal_terms(es, f, z, 1)[1].values, circ, 1)
    ref = eps * kernel_at(es, t).values + eps * t * kernel_time_derivative(es, t, 1).values
    assert np.max(np.abs(d1 - ref)) <= 1e-7 * np.max(np.abs(ref))


def test_cauchy_warns_on_imaginary_part():
    circ = CauchyCircle(1.0, 32)
    with pytest.warns(RuntimeWarning):
        cauchy_derivative(1j * np.exp(-circ.nodes), circ, 1)
    with pytest.raises(ValueError):
        cauchy_derivative(np.ones(5), circ, 1)


def test_sum_matches_oracle_small():
    tor = build_torus(2, 8)
    f = make_factor(tor, FactorFamily("sinusoidal", 0.2))
    kern, rep = dyson_sum(tor, f, 0.02, DysonConfig(mode_cutoff=1e9))
    oracle = kernel_at(eigendecompose(conformal_laplacian(tor, f)), 0.02).values
    assert np.max(np.abs(kern.values - oracle)) <= 1e-9 * np.max(oracle)
    assert kern.tag == "mu_tilde"
    assert kern.mass_defect() <= 1e-8
    assert kern.symmetry_error() <= 1e-9
    assert rep.quadrature_check <= 1e-12
    assert rep.tail_bound <= 1e-8


def test_term_size_scales_with_amplitude_power():
    tor = build_torus(2, 8)
    tm = []
    for a in (0.2, 0.1):
        f = make_factor(tor, FactorFamily("sinusoidal", a))
        ser = DysonSeries(tor, f, DysonConfig(K=5, mode_cutoff=1e9))
        tm.append(ser.derivative_terms(0.02).term_max)
    for k in range(1, 6):
        assert tm[0][k] / tm[1][k] == pytest.approx(2.0**k, rel=1e-6)


def test_divergence_detected():
    ser = DysonSeries.__new__(DysonSeries)
    ser.config = DysonConfig()
    ser.factor = types.SimpleNamespace(phi_inf=0.9)
    ser.quadrature_check = 0.0
    stack = types.SimpleNamespace(term_max=[1.0, 1.5, 2.0, 2.5, 3.0, 3.5], mode_count=3)
    with pytest.raises(DysonDivergence):
        ser.tail_report(stack)


def test_early_stop_and_ratio_constant():
    ser = DysonSeries.__new__(DysonSeries)
    ser.config = DysonConfig(r_stop=1e-6)
    ser.factor = types.SimpleNamespace(phi_inf=0.1)
    ser.quadrature_check = 0.0
    stack = types.SimpleNamespace(term_max=[1.0 * 0.1**k for k in range(10)], mode_count=3)
    rep = ser.tail_report(stack)
    # stop at the first k with r_k max|term_k| = 0.1^(k+1) below 1e-6
    assert rep.orders_used == 6
    assert rep.ratio_constant == pytest.approx(1 / math.sqrt(2))
    assert rep.to_dict()["fitted_C"] == pytest.approx(1 / math.sqrt(2))


@pytest.mark.parametrize("bad", [{"K": 0}, {"Q": 4}, {"M": 33}, {"ray_nodes": 2}, {"mode_cutoff": 0}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        DysonConfig(**bad)


def test_heat_residual_reduces_to_spectral():
    tor = build_torus(2, 8)
    f0 = make_factor(tor, FactorFamily("constant", 0.0))
    es = eigendecompose(weighted_laplacian(tor, f0))
    t = 0.05
    r_dys = heat_residual(tor, f0, lambda s: dyson_sum(tor, f0, s)[0].values, t)
    r_spec = heat_residual(tor, f0, lambda s: kernel_at(es, s).values, t)
    assert r_dys == r_spec
    # the central-difference floor eps^2/6 * |d3p| / |dp| sets the size
    third = np.max(np.abs(kernel_time_derivative(es, t, 3).values))
    first = np.max(np.abs(kernel_time_derivative(es, t, 1).values))
    assert r_spec <= 1.1 * 1e-8 / 6 * third / first


def test_heat_residual_decreases_with_order():
    tor = build_torus(2, 8)
    f = make_factor(tor, FactorFamily("sinusoidal", 0.2))
    ser = DysonSeries(tor, f, DysonConfig(mode_cutoff=1e9))
    t, eps = 0.02, 1e-4
    stacks = {s: ser.derivative_terms(s) for s in (t - eps, t, t + eps)}
    res = [heat_residual(tor, f, lambda s: stacks[s].partial_sum(K), t, eps) for K in (0, 1, 2, 4)]
    assert all(b < a for a, b in zip(res, res[1:]))
    assert res[-1] <= 1e-4


@pytest.mark.parametrize("a", [0.0, 0.1])
def test_initial_condition(a):
    tor = build_torus(1, 64)
    f = make_factor(tor, FactorFamily("sinusoidal", a))
    es = eigendecompose(weighted_laplacian(tor, f))
    t0 = (tor.L / 4) ** 2 / 16
    rep = initial_condition_check(
        tor, f, lambda s: dyson_sum(tor, f, s, eigensystem=es)[0].values, 7, t0
    )
    assert rep.decreasing
    assert min(rep.shrink_factors) >= 10
    assert rep.mass_defect <= 1e-8
    if a == 0:
        ref = initial_condition_check(tor, f, lambda s: kernel_at(es, s).values, 7, t0)
        assert rep.offdiag_sup == ref.offdiag_sup
