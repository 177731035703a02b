import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from malab import (
    CartesianGrid,
    DomainError,
    PolarGrid,
    ScalarField,
    field_from_function,
    hessian_determinant_fd,
    radial_solution,
    regime_from_alpha,
    resample_to_cartesian,
)
from malab.core import OutOfDomainError


def test_regime_alpha0_identity():
    r = regime_from_alpha(0.0)
    assert r.beta == 2.0
    assert r.gamma == 0.0
    assert r.c_alpha == 0.5
    assert r.J0 == pytest.approx(2.0)


def test_regime_alpha2():
    r = regime_from_alpha(2.0)
    assert r.beta == 3.0
    assert r.gamma == pytest.approx(-1.0 / 3.0)
    assert r.c_alpha == pytest.approx(1.0 / (3.0 * math.sqrt(2.0)), abs=1e-15)


def test_regime_alpha_minus1():
    r = regime_from_alpha(-1.0)
    assert r.beta == 1.5
    assert r.gamma == pytest.approx(1.0 / 3.0)
    assert r.c_alpha == pytest.approx(1.0 / (1.5 * math.sqrt(0.5)), abs=1e-12)


def test_regime_domain_error():
    with pytest.raises(DomainError):
        regime_from_alpha(-2.0)
    with pytest.raises(DomainError):
        regime_from_alpha(-2.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=-1.95, max_value=10.0))
def test_regime_defining_identity(alpha):
    r = regime_from_alpha(alpha)
    # beta^2 (beta-1) c_alpha^2 = 1 pins the radial coefficient
    assert r.beta**2 * (r.beta - 1.0) * r.c_alpha**2 == pytest.approx(1.0, abs=1e-12)
    assert -1.0 < r.gamma < 1.0
    assert (r.gamma == 0.0) == (alpha == 0.0)


def test_radial_solution_values(regime2, disc_257):
    u0 = radial_solution(regime2, disc_257)
    x1, x2 = disc_257.node_coords()
    r = np.hypot(x1, x2)
    ok = np.isfinite(u0.values)
    assert np.allclose(u0.values[ok], regime2.c_alpha * r[ok] ** 3, atol=1e-15)
    # homogeneity: u0(2x) = 2^beta u0(x)
    pts = np.array([[0.1, 0.05], [0.2, -0.3]])
    v1 = u0.sample(2 * pts)
    v2 = 2.0**regime2.beta * u0.sample(pts)
    assert np.allclose(v1, v2, atol=1e-9)


def test_hessian_fd_quadratic_exact(disc_257):
    f = field_from_function(disc_257, lambda x, y: 0.5 * x**2 + 0.5 * y**2)
    for pt in [(0.0, 0.0), (0.3, 0.2), (-0.5, 0.1)]:
        assert hessian_determinant_fd(f, pt) == pytest.approx(1.0, abs=1e-10)


def test_hessian_fd_nonradial_model(disc_257):
    # a=1, alpha=2: u = |x1|^4/12 + x2^2/2 has det D^2 u = x1^2
    f = field_from_function(disc_257, lambda x, y: np.abs(x) ** 4 / 12.0 + 0.5 * y**2)
    for x1 in (0.2, 0.5, -0.7):
        det = hessian_determinant_fd(f, (x1, 0.1))
        assert det == pytest.approx(x1**2, rel=1e-3)


def test_hessian_fd_radial_second_order(regime2):
    errs = []
    for n in (129, 257):
        g = CartesianGrid.square(n)
        u0 = radial_solution(regime2, g)
        det = hessian_determinant_fd(u0, (0.6, 0.0))
        errs.append(abs(det - 0.36))
    order = math.log2(errs[0] / errs[1])
    assert order > 1.8


def test_hessian_fd_polar(regime2, polar_512):
    u0 = radial_solution(regime2, polar_512)
    det = hessian_determinant_fd(u0, (0.5, 0.0))
    assert det == pytest.approx(0.25, rel=1e-5)


def test_hessian_fd_out_of_domain(disc_257):
    f = field_from_function(disc_257, lambda x, y: x**2 + y**2)
    with pytest.raises(OutOfDomainError):
        hessian_determinant_fd(f, (0.9999, 0.0))


def test_affine_invariance_of_oracle(disc_257):
    # unimodular shear: v(x) = u(Tx) has det D^2 v = (det T)^2 det D^2 u (Tx)
    T = np.array([[1.0, 1.0], [0.0, 1.0]])

    def u(x, y):
        return 0.7 * x**2 + 0.4 * y**2 + 0.1 * x * y

    f_v = field_from_function(disc_257, lambda x, y: u(x + y, y))
    det_u = 4 * 0.7 * 0.4 - 0.1**2
    assert hessian_determinant_fd(f_v, (0.05, -0.1)) == pytest.approx(det_u, abs=1e-9)


def test_field_serialization_roundtrip(regime2, tmp_path):
    g = CartesianGrid.square(33)
    u0 = radial_solution(regime2, g)
    path = tmp_path / "f.txt"
    u0.save(path)
    back = ScalarField.load(path)
    assert back.grid.kind == "cartesian"
    assert np.allclose(back.values, u0.values, equal_nan=True)
    assert np.allclose(back.gradient_origin, [0.0, 0.0])

    gp = PolarGrid.standard(17, 16)
    up = radial_solution(regime2, gp)
    text = up.to_text()
    back2 = ScalarField.from_text(text)
    assert back2.grid.shape == (17, 16)
    assert np.allclose(back2.values, up.values)


def test_field_csv_export(regime2, tmp_path):
    g = CartesianGrid.square(17)
    u0 = radial_solution(regime2, g)
    path = tmp_path / "f.csv"
    u0.to_csv(path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "x1,x2,u"
    assert len(rows) == 1 + int(np.isfinite(u0.values).sum())


def test_convexity_margin(disc_257):
    conv = field_from_function(disc_257, lambda x, y: x**2 + y**2)
    assert conv.convexity_margin() == pytest.approx(2.0, abs=1e-9)
    assert conv.is_convex()
    conc = field_from_function(disc_257, lambda x, y: -(x**2) - y**2)
    assert conc.convexity_margin() < 0


def test_polar_grid_excludes_origin():
    g = PolarGrid.standard(65, 64)
    assert g.r_min > 0
    with pytest.raises(DomainError):
        PolarGrid(65, 64, r_min=0.0)


def test_resample_polar_to_cartesian(regime2, polar_512):
    u0 = radial_solution(regime2, polar_512)
    cart = resample_to_cartesian(u0, 129)
    x1, x2 = cart.grid.node_coords()
    r = np.hypot(x1, x2)
    ok = np.isfinite(cart.values) & (r > 0.05)
    err = np.abs(cart.values[ok] - regime2.c_alpha * r[ok] ** 3)
    assert err.max() < 1e-8
