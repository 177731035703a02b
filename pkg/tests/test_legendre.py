import math

import numpy as np
import pytest

from malab import CartesianGrid, field_from_function
from malab.core import DegeneracyError, DomainError
from malab.legendre import (
    expansion_coefficients,
    hat_average_power,
    involution_error,
    partial_legendre,
    solve_degenerate_linear,
)
from conftest import square_grid


def test_model_transform_remark():
    # p = a|x1|^(2+alpha) + b x1 x2 + d x2^2 -> -a|y1|^(2+alpha) + (y2-b y1)^2/(4d)
    a, b, d, alpha = 0.7, 0.3, 0.8, 2.0
    g = square_grid(201)
    f = field_from_function(g, lambda x, y: a * np.abs(x) ** 4 + b * x * y + d * y**2)
    pair = partial_legendre(f)
    y1, y2 = pair.dual.grid.node_coords()
    expect = -a * np.abs(y1) ** 4 + (y2 - b * y1) ** 2 / (4 * d)
    ok = np.isfinite(pair.dual.values)
    assert np.max(np.abs(pair.dual.values[ok] - expect[ok])) < 1e-8


def test_correspondence_map():
    g = square_grid(101)
    f = field_from_function(g, lambda x, y: 0.5 * y**2 + 0.1 * x * y)
    pair = partial_legendre(f)
    x1, x2 = g.node_coords()
    # y2 = du/dx2 = x2 + 0.1 x1 exactly (quadratic in x2)
    assert np.allclose(pair.domain_map, x2 + 0.1 * x1, atol=1e-12)


def test_involution_smooth_fields():
    g = square_grid(513)
    f = field_from_function(
        g, lambda x, y: 0.4 * x**2 + 0.6 * y**2 + 0.1 * x * y + 0.05 * y**4 + 0.08 * np.exp(0.5 * x)
    )
    assert involution_error(f) < 1e-8


def test_dual_signs():
    # dual convex in y2, concave in y1
    g = square_grid(201)
    f = field_from_function(g, lambda x, y: np.abs(x) ** 4 / 12.0 + 0.5 * y**2 + 0.6 * x**2)
    pair = partial_legendre(f)
    v = pair.dual.values
    ok = np.isfinite(v)
    d2y = v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]
    oky = ok[:, 2:] & ok[:, 1:-1] & ok[:, :-2]
    assert d2y[oky].min() > -1e-10
    d2x = v[2:, :] - 2 * v[1:-1, :] + v[:-2, :]
    okx = ok[2:, :] & ok[1:-1, :] & ok[:-2, :]
    assert d2x[okx].max() < 1e-10


def test_contraction_in_sup_norm():
    g = square_grid(151)
    base = lambda x, y: 0.5 * y**2 + 0.3 * x**2
    f = field_from_function(g, base)
    eps = 1e-3
    fp = field_from_function(g, lambda x, y: base(x, y) + eps * np.sin(3 * x) * np.cos(2 * y))
    a = partial_legendre(f)
    b = partial_legendre(fp)
    both = np.isfinite(a.dual.values) & np.isfinite(b.dual.values)
    diff = np.max(np.abs(a.dual.values[both] - b.dual.values[both]))
    assert diff <= eps * (1.0 + 0.05)


def test_nonconvex_slice_raises():
    g = square_grid(101)
    f = field_from_function(g, lambda x, y: -0.5 * y**2 + x**2)
    with pytest.raises(DegeneracyError):
        partial_legendre(f)


def test_hat_average_symmetric_exactness():
    # symmetric arms: average equals the FD second difference of the power primitive
    alpha, h = 2.0, 0.01
    y = 0.13
    p = 2.0 + alpha
    G = lambda s: abs(s) ** p / (p * (p - 1.0))
    fd = (G(y + h) - 2 * G(y) + G(y - h)) / h**2
    assert hat_average_power(y, alpha, h, h) == pytest.approx(fd, rel=1e-12)


def test_degenerate_solver_manufactured_exact(disc_257):
    alpha = 2.0
    w = solve_degenerate_linear(
        alpha, 1.0,
        lambda th: 0.5 * np.sin(th) ** 2 - np.abs(np.cos(th)) ** 4 / 12.0,
        disc_257,
    )
    x1, x2 = disc_257.node_coords()
    exact = 0.5 * x2**2 - np.abs(x1) ** 4 / 12.0
    ok = np.isfinite(w.values)
    assert np.max(np.abs(w.values[ok] - exact[ok])) < 1e-10


def test_degenerate_solver_y1y2_and_affine(disc_257):
    x1, x2 = disc_257.node_coords()
    w = solve_degenerate_linear(2.0, 1.0, lambda th: np.cos(th) * np.sin(th), disc_257)
    ok = np.isfinite(w.values)
    assert np.max(np.abs(w.values[ok] - (x1 * x2)[ok])) < 1e-11
    w2 = solve_degenerate_linear(2.0, 1.0, lambda th: 0.2 + 0.3 * np.cos(th), disc_257)
    assert np.max(np.abs(w2.values[ok] - (0.2 + 0.3 * x1)[ok])) < 1e-11


def test_degenerate_solver_max_principle(disc_257):
    w = solve_degenerate_linear(2.0, 1.0, lambda th: np.cos(2 * th), disc_257)
    assert np.nanmax(w.values) <= 1.0 + 1e-12
    assert np.nanmin(w.values) >= -1.0 - 1e-12


def test_degenerate_solver_rejects_bad_alpha(disc_257):
    with pytest.raises(DomainError):
        solve_degenerate_linear(-0.5, 1.0, lambda th: np.cos(th), disc_257)
    with pytest.raises(DomainError):
        solve_degenerate_linear(2.0, -1.0, lambda th: np.cos(th), disc_257)


def test_w22_bounded_under_refinement():
    # |w| <= 1 data: discrete w22 on B_{1/4} stays bounded independently of h
    sups = []
    for n in (65, 129, 257):
        g = CartesianGrid.square(n)
        w = solve_degenerate_linear(2.0, 1.0, lambda th: np.cos(2 * th), g)
        v = w.values
        x1, x2 = g.node_coords()
        d2 = (v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]) / g.hy**2
        sel = (np.hypot(x1, x2)[:, 1:-1] < 0.25) & np.isfinite(d2)
        sups.append(float(np.max(np.abs(d2[sel]))))
    assert max(sups) < 50.0
    assert max(sups) < 1.5 * min(sups)


def test_expansion_pure_block(disc_257):
    f = field_from_function(disc_257, lambda x, y: 0.5 * y**2 - np.abs(x) ** 4 / 12.0)
    rep = expansion_coefficients(f, 2.0)
    assert rep.a3 == pytest.approx(1.0, abs=1e-9)
    assert abs(rep.a0) < 1e-9 and np.max(np.abs(rep.a1)) < 1e-9 and abs(rep.a2) < 1e-9
    assert rep.noise_floor


def test_expansion_pure_y1y2(disc_257):
    f = field_from_function(disc_257, lambda x, y: x * y)
    rep = expansion_coefficients(f, 2.0)
    assert rep.a2 == pytest.approx(1.0, abs=1e-9)
    assert abs(rep.a3) < 1e-9


def test_expansion_solver_field_has_improving_remainder(disc_257):
    w = solve_degenerate_linear(2.0, 1.0, lambda th: np.cos(2 * th), disc_257)
    rep = expansion_coefficients(w, 2.0)
    assert not rep.noise_floor
    assert rep.remainder_exponent > 1.0
    js = rep.to_json()
    assert '"remainder_exponent"' in js
