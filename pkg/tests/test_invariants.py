import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from malab import CartesianGrid, PolarGrid, field_from_function, radial_solution, regime_from_alpha
from malab.core import DegeneracyError, DomainError
from malab.homogeneous import assemble_homogeneous
from malab.invariants import (
    J_limit_estimate,
    J_value,
    J_values,
    blowup,
    interior_max_check,
)


def test_J0_closed_form(regime2):
    assert regime2.J0 == pytest.approx(3.0 * 2.0 ** (-2.0 / 3.0), abs=1e-12)


def test_J_on_radial_polar(regime2, polar_512):
    u0 = radial_solution(regime2, polar_512)
    pts = np.array([[0.5, 0.0], [0.0, 0.3], [-0.4, 0.4]])
    J = J_values(u0, pts, regime2)
    assert np.max(np.abs(J - regime2.J0)) < 1e-3


def test_J_on_radial_cartesian(regime2):
    g = CartesianGrid.square(513)
    u0 = radial_solution(regime2, g)
    J = J_value(u0, (0.5, 0.2), regime2)
    assert J == pytest.approx(regime2.J0, abs=1e-3)


def test_J_gamma_zero_is_laplacian(regime0, polar_512):
    u0 = radial_solution(regime0, polar_512)  # |x|^2 / 2
    pts = np.array([[0.3, 0.1], [0.6, -0.2]])
    assert np.allclose(J_values(u0, pts, regime0), 2.0, atol=1e-8)


def test_J_positivity_guard(regime2, polar_512):
    conc = field_from_function(polar_512, lambda x, y: -np.hypot(x, y) ** 3)
    with pytest.raises(DegeneracyError):
        J_value(conc, (0.5, 0.0), regime2)


def test_J_constant_on_homogeneous(alpha6_profile, regime6, polar_512):
    w = assemble_homogeneous(alpha6_profile, polar_512)
    th = np.linspace(0, 2 * math.pi, 64, endpoint=False)
    ray_vals = []
    for r in (0.3, 0.5, 0.7, 0.9):
        pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
        J = J_values(w, pts, regime6)
        assert J.std() < 1e-3
        ray_vals.append(J.mean())
    assert np.std(ray_vals) < 1e-3
    # matches the envelope's closed-form constant
    c = alpha6_profile.envelope.c
    b = regime6.beta
    expect = c * (1 - 1 / b) * (b * (b - 1)) ** regime6.gamma
    assert np.mean(ray_vals) == pytest.approx(expect, abs=1e-3)


def test_blowup_fixed_point(regime2, polar_512):
    u0 = radial_solution(regime2, polar_512)
    v = blowup(u0, 0.5, regime2)
    pts = np.array([[0.5, 0.0], [0.3, 0.2], [0.0, 0.8]])
    assert np.allclose(v.sample(pts), u0.sample(pts), atol=1e-12)


def test_blowup_homogeneous_fixed_point(alpha6_profile, regime6, polar_512):
    w = assemble_homogeneous(alpha6_profile, polar_512)
    v = blowup(w, 0.25, regime6)
    pts = np.array([[0.4, 0.1], [0.1, 0.6]])
    assert np.allclose(v.sample(pts), w.sample(pts), atol=1e-8)


@settings(max_examples=10, deadline=None)
@given(st.floats(min_value=0.3, max_value=0.9))
def test_blowup_J_covariance(r):
    regime = regime_from_alpha(2.0)
    grid = PolarGrid.standard(256, 256)
    field = field_from_function(
        grid,
        lambda x, y: regime.c_alpha * np.hypot(x, y) ** 3 + 0.05 * np.hypot(x, y) ** 4,
        anchored=True,
    )
    v = blowup(field, r, regime)
    pts = np.array([[0.5, 0.0], [0.0, 0.4]])
    Jv = J_values(v, pts, regime)
    Ju = J_values(field, r * pts, regime)
    assert np.max(np.abs(Jv - Ju)) < 1e-3


def test_blowup_requires_anchor(regime2, polar_512):
    u0 = radial_solution(regime2, polar_512)
    u0.gradient_origin = None
    with pytest.raises(DomainError):
        blowup(u0, 0.5, regime2)


def test_J_limit_on_radial(regime2, polar_512):
    u0 = radial_solution(regime2, polar_512)
    tr = J_limit_estimate(u0, regime2, [0.8, 0.4, 0.2, 0.1])
    assert tr.J_limit == pytest.approx(regime2.J0, abs=1e-3)
    assert np.max(tr.oscillation_per_ring) < 1e-8
    assert not tr.inconclusive


def test_J_limit_on_homogeneous(alpha6_profile, regime6, polar_512):
    w = assemble_homogeneous(alpha6_profile, polar_512)
    tr = J_limit_estimate(w, regime6, [0.8, 0.4, 0.2])
    c = alpha6_profile.envelope.c
    b = regime6.beta
    expect = c * (1 - 1 / b) * (b * (b - 1)) ** regime6.gamma
    assert tr.J_limit == pytest.approx(expect, abs=1e-3)


def test_J_trace_io(tmp_path, regime2, polar_512):
    u0 = radial_solution(regime2, polar_512)
    tr = J_limit_estimate(u0, regime2, [0.8, 0.4, 0.2])
    tr.to_csv(tmp_path / "trace.csv")
    text = (tmp_path / "trace.csv").read_text().splitlines()
    assert text[0] == "r,J_mean,J_min,J_max"
    assert len(text) == 4
    assert "J_limit" in tr.to_json()


def test_interior_max_constant_on_radial(regime2, polar_512):
    u0 = radial_solution(regime2, polar_512)
    rep = interior_max_check(u0, regime2, (0.2, 0.6))
    assert rep.constant


def test_interior_max_constant_on_homogeneous(alpha6_profile, regime6, polar_512):
    w = assemble_homogeneous(alpha6_profile, polar_512)
    rep = interior_max_check(w, regime6, (0.3, 0.7))
    assert rep.constant
    assert rep.value > 1e-3  # |J_w - J0| constant and positive


def test_log_J_finite(regime2, polar_512):
    u0 = radial_solution(regime2, polar_512)
    th = np.linspace(0, 2 * math.pi, 32, endpoint=False)
    pts = np.column_stack([0.5 * np.cos(th), 0.5 * np.sin(th)])
    M = np.log(J_values(u0, pts, regime2))
    assert np.all(np.isfinite(M))
