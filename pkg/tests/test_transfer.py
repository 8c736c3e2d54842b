from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from nhqst.dynamics import TimeGrid, amplitudes
from nhqst.models import ModelSpec
from nhqst.transfer import (
    CLASSICAL_THRESHOLD,
    FidelityCurve,
    HaarQuadrature,
    QuadratureConvergenceError,
    average_fidelity_u1,
    fidelity_curve,
    fidelity_direct_formula,
    fidelity_normalized,
    fidelity_series,
    first_local_max,
    haar_fidelity_curve,
    haar_fidelity_numeric,
    transfer_metrics,
)


def haar_integral(b, gamma):
    """Average of <psi|rho_N|psi> over the Bloch sphere by adaptive quadrature."""

    def integrand(phi, theta):
        c, s = math.cos(theta / 2), math.sin(theta / 2)
        norm = c * c + s * s * gamma
        p1 = s * s * abs(b) ** 2 / norm
        coh = np.exp(1j * phi) * s * c * b / norm  # <1|rho|0>
        psi = np.array([c, np.exp(1j * phi) * s])
        rho = np.array([[1 - p1, np.conj(coh)], [coh, p1]])
        return float(np.real(np.conj(psi) @ rho @ psi)) * math.sin(theta) / (4 * math.pi)

    val, _ = integrate.dblquad(integrand, 0, math.pi, 0, 2 * math.pi, epsabs=1e-12, epsrel=1e-12)
    return val


@pytest.mark.parametrize(
    "b,gamma",
    [(0.5 + 0.3j, 1.0), (0.2 - 0.6j, 1.7), (0.1 + 0.05j, 0.4), (-0.3 + 0.1j, 1.00002), (2.0 + 1j, 30.0)],
)
def test_closed_form_equals_bloch_sphere_average(b, gamma):
    assert average_fidelity_u1(b, gamma) == pytest.approx(haar_integral(b, gamma), abs=1e-9)


def test_hermitian_point_formula():
    b = 0.4 - 0.7j
    expected = 0.5 + b.real / 3 + abs(b) ** 2 / 6
    assert average_fidelity_u1(b, 1.0) == pytest.approx(expected, abs=1e-15)
    assert fidelity_series(b, 1.0) == pytest.approx(expected, abs=1e-15)


def _exact(b, gamma):
    mpmath.mp.dps = 60
    x, y, g = mpmath.mpf(b.real), mpmath.mpf(abs(b) ** 2), mpmath.mpf(gamma)
    u = g - 1
    return float(mpmath.mpf(0.5) + (x - 2 * y + g * x) / u**2 + ((1 + g) * y - 2 * g * x) * mpmath.log(g) / u**3)


@pytest.mark.parametrize("gamma", [1 - 1e-4, 1 - 3e-6, 1 + 1e-7, 1 + 5e-5, 1.01, 1.5, 2.7, 15.0, 1e6])
def test_branches_match_high_precision(gamma):
    b = 0.3 + 0.4j
    b = b * min(1.0, math.sqrt(gamma) * 0.99)
    assert average_fidelity_u1(b, gamma) == pytest.approx(_exact(b, gamma), abs=1e-12)


def test_series_and_direct_agree_at_series_edge():
    b = 0.2 + 0.5j
    for g in (1 - 1e-4, 1 + 1e-4, 1 + 3e-4):
        # the direct formula loses ~eps_ld / u^2 to cancellation here
        assert fidelity_series(b, g) == pytest.approx(fidelity_direct_formula(b, g), abs=1e-10)


def test_large_gamma_tends_to_half():
    lg = np.array([10.0, 100.0, 1000.0])
    F = fidelity_normalized(np.full(3, 0.3 + 0.1j), lg)
    assert np.all(np.isfinite(F))
    assert F[-1] == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("b,g", [(0.1, 0.0), (0.1, -1.0), (1.5, 1.0)])
def test_invalid_inputs(b, g):
    with pytest.raises(ValueError):
        average_fidelity_u1(b, g)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0, 1), st.floats(0, 2 * math.pi), st.floats(-8, 12)
)
def test_fidelity_bounded(r, ang, lg):
    F = fidelity_normalized(r * np.exp(1j * ang), lg)
    assert 0.0 <= F <= 1.0 + 1e-12


def test_metrics_on_synthetic_curve():
    # F = 0.5 + 0.3 sin(t): crosses 2/3 at asin(5/9), peaks at pi/2 with 0.8
    t = np.linspace(0, 10, 201)
    f = lambda s: 0.5 + 0.3 * np.sin(s)
    m = transfer_metrics(FidelityCurve(t, f(t), f))
    assert m.t_min == pytest.approx(math.asin(5 / 9), abs=1e-6)
    assert m.first_max_t == pytest.approx(math.pi / 2, abs=1e-4)
    assert m.first_max_F == pytest.approx(0.8, abs=1e-8)
    # without an evaluator the parabola refinement still lands close
    m2 = transfer_metrics(FidelityCurve(t, f(t)))
    assert m2.first_max_F == pytest.approx(0.8, abs=1e-5)


def test_no_gain_curve():
    t = np.linspace(0, 10, 101)
    m = transfer_metrics(FidelityCurve(t, 0.5 + 0.1 * np.sin(t)))
    assert not m.gain and m.t_min is None and m.first_max_F is None


def test_first_local_max_skips_subthreshold_peaks():
    F = np.array([0.5, 0.6, 0.55, 0.7, 0.8, 0.75, 0.9, 0.1])
    assert first_local_max(F) == 4
    assert first_local_max(F, threshold=0.85) == 6
    assert first_local_max(F[:2]) is None


def test_closed_form_curve_starts_at_half():
    curve = fidelity_curve(ModelSpec("xx", 8, h1=0.2, h2=0.05), TimeGrid(10, 0.1))
    assert curve.F[0] == pytest.approx(0.5)
    assert CLASSICAL_THRESHOLD == pytest.approx(2 / 3)


@pytest.mark.parametrize("variant,h2", [("nh", 0.05), ("hermitian", 0.3), ("nh", 0.4)])
def test_numeric_haar_matches_closed_form(variant, h2):
    spec = ModelSpec("xx", 6, h1=0.2, h2=h2, variant=variant)
    times = [0.7, 3.3, 11.0]
    tr = amplitudes(spec, TimeGrid(11.0, 0.1))
    closed = fidelity_curve(spec, TimeGrid(11.0, 0.1))
    for t in times:
        i = int(round(t / 0.1))
        assert haar_fidelity_numeric(spec, tr.times[i]) == pytest.approx(closed.F[i], abs=1e-9)


def test_haar_curve_matches_pointwise_numeric():
    spec = ModelSpec("ixy", 4, h=1.2, gamma=0.3)
    curve = haar_fidelity_curve(spec, TimeGrid(3.0, 0.5), HaarQuadrature(24, 24))
    for t, F in zip(curve.times, curve.F):
        assert haar_fidelity_numeric(spec, t, quadrature_order=24) == pytest.approx(F, abs=1e-9)
    assert np.allclose(curve.evaluator(curve.times), curve.F, atol=1e-9)


def test_quadrature_exact_for_low_degree():
    # the Haar average of |<0|psi>|^2 is 1/2 and of |<0|psi>|^4 is 1/3
    C, w = HaarQuadrature(8, 8).nodes()
    assert np.sum(w * np.abs(C[:, 0]) ** 2) == pytest.approx(0.5, abs=1e-14)
    assert np.sum(w * np.abs(C[:, 0]) ** 4) == pytest.approx(1 / 3, abs=1e-14)


def test_quadrature_convergence_error_reports_values():
    spec = ModelSpec("ixy", 3, h=1.0, gamma=0.9)
    with pytest.raises(QuadratureConvergenceError) as exc:
        haar_fidelity_numeric(spec, 40.0, quadrature_order=1)
    assert exc.value.coarse != exc.value.fine
