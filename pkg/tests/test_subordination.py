import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatlab.grid_model import FactorFamily, build_torus, make_factor
from heatlab.harness import COARSE_FRACTIONAL_WINDOW, refinement_stable, window_times
from heatlab.operators import base_laplacian, conformal_laplacian
from heatlab.spectral import eigendecompose, kernel_at
from heatlab.subordination import (
    Subordinator,
    fractional_bound_report,
    fractional_entries,
    fractional_kernel_spectral,
    subordinate_kernel,
    subordination_rule,
    subordinator_density,
)


@pytest.fixture(scope="module")
def es3():
    tor = build_torus(3, 12)
    f = make_factor(tor, FactorFamily("sinusoidal", 0.1))
    return eigendecompose(conformal_laplacian(tor, f))


def test_closed_form_value():
    v = subordinator_density(0.5, 1.0, 1.0)
    assert v == pytest.approx(math.exp(-0.25) / (2 * math.sqrt(math.pi)), abs=1e-12)
    assert abs(v - 0.219695) < 1e-6


def test_integral_matches_closed_form():
    rng = np.random.default_rng(3)
    t = rng.uniform(0.05, 2.0, 20)
    # bulk of each density: s within two decades around t^2
    s = t**2 * 10 ** rng.uniform(-1, 1, 20)
    for ti, si in zip(t, s):
        num = subordinator_density(0.5, ti, si, method="integral_representation")
        ref = subordinator_density(0.5, ti, si, method="closed_form_half")
        assert abs(num - ref) <= 1e-7 * ref


@pytest.mark.parametrize("sigma", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("t", [0.1, 1.0])
def test_total_mass(sigma, t):
    _, w = subordination_rule(sigma, t)
    assert abs(w.sum() - 1) <= 1e-8


@settings(max_examples=20, deadline=None)
@given(st.sampled_from([0.3, 0.5, 0.7]), st.floats(0.05, 1.0), st.floats(0.0, 500.0))
def test_laplace_identity(sigma, t, lam):
    got = Subordinator(sigma).laplace(t, np.array([lam]))[0]
    assert got == pytest.approx(math.exp(-t * lam**sigma), abs=1e-7)


def test_density_nonnegative_and_errors():
    s = np.logspace(-6, 3, 50)
    assert np.all(subordinator_density(0.3, 0.5, s) >= 0)
    with pytest.raises(ValueError):
        subordinator_density(1.2, 1.0, 1.0)
    with pytest.raises(ValueError):
        subordinator_density(0.5, 1.0, -1.0)
    with pytest.raises(ValueError):
        subordinator_density(0.3, 1.0, 1.0, method="closed_form_half")
    with pytest.raises(ValueError):
        subordinator_density(0.3, 1.0, 1.0, method="series")
    with pytest.raises(ValueError):
        Subordinator(1.0).density(1.0, 1.0)
    assert Subordinator(1.0).resolved_method == "degenerate_one"


def test_spectral_kernel_limits(es3):
    np.testing.assert_allclose(fractional_kernel_spectral(es3, 1.0, 0.05).values, kernel_at(es3, 0.05).values)
    np.testing.assert_allclose(fractional_kernel_spectral(es3, 0.5, 0.0).values, np.diag(1 / es3.measure))
    diag = [fractional_kernel_spectral(es3, 0.5, t).values[5, 5] for t in (0.01, 0.03, 0.1, 0.3, 1.0)]
    assert all(b < a for a, b in zip(diag, diag[1:]))


def test_two_routes_agree(es3):
    spec = fractional_kernel_spectral(es3, 0.5, 0.1)
    sub = subordinate_kernel(es3, 0.5, 0.1)
    assert np.max(np.abs(spec.values - sub.values)) <= 1e-5 * np.max(spec.values)
    for k in (spec, sub):
        assert k.mass_defect() <= 1e-8
        assert k.symmetry_error() <= 1e-9
    assert sub.provenance == "subordinated" and spec.provenance == "spectral"


def test_base_kernel_and_callable_route():
    tor = build_torus(2, 8)
    es = eigendecompose(base_laplacian(tor))
    spec = fractional_kernel_spectral(es, 0.7, 0.05)
    sub = subordinate_kernel(es, 0.7, 0.05)
    assert np.max(np.abs(spec.values - sub.values)) <= 1e-5 * np.max(spec.values)
    via_callable = subordinate_kernel(lambda s: kernel_at(es, s).values, 0.7, 0.05, measure=es.measure)
    assert np.max(np.abs(via_callable.values - sub.values)) <= 1e-10 * np.max(sub.values)
    with pytest.raises(ValueError):
        subordinate_kernel(lambda s: kernel_at(es, s).values, 0.7, 0.05)
    np.testing.assert_allclose(subordinate_kernel(es, 1.0, 0.05).values, kernel_at(es, 0.05).values)


def test_fractional_envelope_refinement():
    C = []
    for N in (10, 14):
        tor = build_torus(2, N)
        f = make_factor(tor, FactorFamily("sinusoidal", 0.1))
        es = eigendecompose(conformal_laplacian(tor, f))
        times = window_times(tor, COARSE_FRACTIONAL_WINDOW, 6, 2.0)
        rep = fractional_bound_report(es, tor, 0.5, times, COARSE_FRACTIONAL_WINDOW)
        assert rep.samples["count"] >= 500
        C.append(rep.constants["C"])
    assert all(math.isfinite(c) and c > 0 for c in C)
    assert refinement_stable(*C)


def test_fractional_branches():
    tor = build_torus(2, 24)
    es = eigendecompose(base_laplacian(tor))
    sigma, n = 0.5, 2
    x = 0
    # on-diagonal: p(x, x) t^{n/(2 sigma)} stays bounded over the window
    times = window_times(tor, COARSE_FRACTIONAL_WINDOW, 5, 1 / sigma)
    on = [fractional_entries(es, sigma, t, x, x) * t ** (n / (2 * sigma)) for t in times]
    assert max(on) / min(on) <= 5
    # off-diagonal: p(x, y) / (t d^{-(n + 2 sigma)}) stays bounded for t << d^{2 sigma}
    y = tor.index((6, 0))
    d = 6 * tor.dx
    small_t = d ** (2 * sigma) * np.array([0.01, 0.02, 0.05])
    off = [fractional_entries(es, sigma, t, x, y) / (t * d ** (-(n + 2 * sigma))) for t in small_t]
    assert max(off) / min(off) <= 2
