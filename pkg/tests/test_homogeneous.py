import math

import numpy as np
import pytest

from malab import CartesianGrid, PolarGrid, hessian_determinant_fd, radial_solution, regime_from_alpha
from malab.core import AccuracyError, DomainError
from malab.homogeneous import (
    EmptyPositivityError,
    ProfileEnvelope,
    assemble_homogeneous,
    envelope_roots,
    envelope_value,
    find_profile,
    period_integral,
    reconstruct_profile,
    tangency_c0,
)


def test_envelope_alpha0_double_root(regime0):
    # 2 h_c = c t - 4 t^2 - 1; at c = 4 the root at t = 1/2 is double
    assert envelope_value(0.5, 4.0, regime0) == pytest.approx(0.0, abs=1e-14)
    eps = 1e-5
    assert envelope_value(0.5 + eps, 4.0, regime0) < 0
    assert envelope_value(0.5 - eps, 4.0, regime0) < 0


def test_envelope_tangency_at_radial_value(regime2):
    c0, t0 = tangency_c0(regime2)
    assert t0 == pytest.approx(regime2.c_alpha, rel=1e-10)
    assert envelope_value(t0, c0, regime2) == pytest.approx(0.0, abs=1e-12)
    # centered slope vanishes at the tangency
    d = 1e-6
    slope = (envelope_value(t0 + d, c0, regime2) - envelope_value(t0 - d, c0, regime2)) / (2 * d)
    assert abs(slope) < 1e-6


def test_envelope_below_c0_everywhere_negative(regime2):
    c0, _ = tangency_c0(regime2)
    ts = np.logspace(-6, 3, 200)
    h = envelope_value(ts, 0.9 * c0, regime2)
    assert np.all(h < 0)


def test_envelope_domain_error(regime2):
    with pytest.raises(DomainError):
        envelope_value(-1.0, 5.0, regime2)


def test_tangency_alpha0(regime0):
    c0, t0 = tangency_c0(regime0)
    assert c0 == pytest.approx(4.0, rel=1e-12)
    assert t0 == pytest.approx(0.5, rel=1e-12)


def test_tangency_alpha2_closed_form(regime2):
    c0, t0 = tangency_c0(regime2)
    b = regime2.beta
    expect = (b**2 * t0**2 + 1.0 / (b - 1.0) ** 2) / t0 ** (2.0 - 2.0 / b)
    assert c0 == pytest.approx(expect, rel=1e-12)


def test_envelope_roots_bracket_radial(regime2):
    c0, _ = tangency_c0(regime2)
    tm, tp = envelope_roots(2.0 * c0, regime2)
    assert 0 < tm <= regime2.c_alpha <= tp
    assert envelope_value(tm, 2.0 * c0, regime2) == pytest.approx(0.0, abs=1e-11)
    assert envelope_value(tp, 2.0 * c0, regime2) == pytest.approx(0.0, abs=1e-9)


def test_period_alpha0_exact(regime0):
    for c in (4.001, 5.0, 10.0, 100.0):
        assert abs(period_integral(c, regime0) - math.pi / 2) < 1e-6


def test_period_near_tangency_limit(regime2):
    c0, _ = tangency_c0(regime2)
    I = period_integral(c0 * (1.0 + 1e-4), regime2)
    assert abs(I - math.pi / math.sqrt(6.0)) < 1e-2


def test_period_empty_window(regime2):
    c0, _ = tangency_c0(regime2)
    with pytest.raises(EmptyPositivityError):
        period_integral(0.99 * c0, regime2)


@pytest.mark.parametrize("alpha", [1.0, 2.0, 4.0, 6.0])
def test_period_inclusion_bounds_positive(alpha):
    regime = regime_from_alpha(alpha)
    c0, _ = tangency_c0(regime)
    beta = regime.beta
    for c in c0 * (1.0 + np.logspace(-4, 4, 12)):
        I = period_integral(c, regime)
        assert math.pi / beta < I < math.pi / 2


@pytest.mark.parametrize("alpha", [-0.5, -1.0, -1.5])
def test_period_inclusion_bounds_negative(alpha):
    regime = regime_from_alpha(alpha)
    c0, _ = tangency_c0(regime)
    beta = regime.beta
    for c in c0 * (1.0 + np.logspace(-4, 4, 12)):
        I = period_integral(c, regime)
        assert math.pi / 2 < I < math.pi / beta


def test_period_continuity_in_c(regime6):
    c0, _ = tangency_c0(regime6)
    cs = c0 * (1.0 + np.logspace(-3, 1, 30))
    vals = [period_integral(c, regime6) for c in cs]
    jumps = np.abs(np.diff(vals))
    assert np.all(jumps < 0.05)


def test_find_profile_alpha6_k3(regime6):
    found = find_profile(3, regime6)
    assert found.c_star is not None
    assert period_integral(found.c_star, regime6) == pytest.approx(math.pi / 3, abs=1e-9)
    lo, hi = found.I_range
    assert lo == pytest.approx(math.pi / math.sqrt(2 * regime6.beta), abs=1e-2)
    assert hi < math.pi / 2


def test_find_profile_none_for_negative_alpha(regime_m1):
    for k in (1, 2, 3):
        found = find_profile(k, regime_m1)
        assert found.c_star is None
        lo, hi = found.I_range
        assert lo > math.pi / 2 - 1e-9


def test_find_profile_alpha2_k3_boundary_case(regime2):
    found = find_profile(3, regime2)
    assert found.c_star is None
    lo, _ = found.I_range
    # inf I_c = pi/sqrt(6) > pi/3: the target is never bracketed
    assert lo > math.pi / 3


def test_find_profile_alpha0_flat(regime0):
    found = find_profile(2, regime0)
    assert found.c_star is None
    assert found.I_range[0] == pytest.approx(math.pi / 2, abs=1e-9)
    assert found.I_range[1] == pytest.approx(math.pi / 2, abs=1e-9)


def test_reconstruct_radial_profile(regime2):
    c0, _ = tangency_c0(regime2)
    prof = reconstruct_profile(c0, 1, regime2)
    assert np.allclose(prof.g, regime2.c_alpha)
    assert prof.ode_residual_max() < 1e-12


def test_profile_alpha6_k3(alpha6_profile, regime6):
    prof = alpha6_profile
    assert prof.period * 3 == pytest.approx(2 * math.pi, abs=1e-8)
    assert prof.g.min() == pytest.approx(prof.envelope.t_minus, abs=1e-10)
    assert prof.g.max() == pytest.approx(prof.envelope.t_plus, abs=1e-10)
    assert prof.ode_residual_max() < 1e-6
    # even about the minimum at theta = 0
    assert np.allclose(prof.g[1:], prof.g[1:][::-1], atol=1e-12)
    # round trip: (g')^2 = 2 h_c(g)
    h = np.maximum(envelope_value(np.maximum(prof.g, 1e-300), prof.envelope.c, regime6), 0.0)
    assert np.max(np.abs(prof.gprime**2 - 2.0 * h)) < 1e-12


def test_profile_monotone_half_period(alpha6_profile):
    n = len(alpha6_profile.g)
    half = alpha6_profile.g[: n // 2 + 1]
    assert np.all(np.diff(half) >= -1e-12)


def test_assemble_radial_matches_radial_solution(regime2):
    c0, _ = tangency_c0(regime2)
    prof = reconstruct_profile(c0, 1, regime2)
    g = PolarGrid.standard(64, 64)
    w = assemble_homogeneous(prof, g)
    u0 = radial_solution(regime2, g)
    assert np.allclose(w.values, u0.values, atol=1e-12)


def test_assemble_homogeneity(alpha6_profile, regime6):
    g = CartesianGrid.square(129)
    w = assemble_homogeneous(alpha6_profile, g)
    pts = np.array([[0.11, 0.07], [0.2, -0.1], [-0.15, 0.22]])
    v2 = w.sample(2 * pts)
    v1 = w.sample(pts)
    assert np.allclose(v2, 2.0**regime6.beta * v1, rtol=1e-7, atol=1e-9)


def test_assembled_field_satisfies_equation(alpha6_profile, regime6):
    g = PolarGrid.standard(512, 512)
    w = assemble_homogeneous(alpha6_profile, g)
    for r, th in [(0.35, 0.3), (0.5, 1.1), (0.8, 2.7), (0.65, 4.0)]:
        pt = (r * math.cos(th), r * math.sin(th))
        det = hessian_determinant_fd(w, pt)
        assert det == pytest.approx(r**6, rel=1e-3)
