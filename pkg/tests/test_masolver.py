import json
import math

import numpy as np
import pytest

from malab import CartesianGrid, ScalarField, field_from_function, radial_solution, regime_from_alpha
from malab.core import DomainError
from malab.masolver import (
    ConvexSolution,
    DirichletProblem,
    cell_average_power,
    parse_problem,
    residual,
    solve,
    stencil_pairs,
)


def test_stencil_pairs_orthogonal():
    for width in (1, 2, 3):
        pairs = stencil_pairs(width)
        for d, dp in pairs:
            assert d[0] * dp[0] + d[1] * dp[1] == 0
            assert d[0] ** 2 + d[1] ** 2 == dp[0] ** 2 + dp[1] ** 2
    assert len(stencil_pairs(1)) == 2
    assert len(stencil_pairs(2)) == 4
    assert len(stencil_pairs(3)) == 8


def test_quadratic_exact():
    g = CartesianGrid.square(65)
    prob = DirichletProblem.power(1.0, 0.0, lambda th: 0.5 * np.ones_like(th), g)
    sol = solve(prob)
    x1, x2 = g.node_coords()
    ok = np.isfinite(sol.field.values)
    assert np.max(np.abs(sol.field.values[ok] - 0.5 * (x1**2 + x2**2)[ok])) < 1e-10
    assert residual(sol, prob) < 1e-9
    assert sol.convexity_margin > 0.9


def test_manufactured_quartic_second_order():
    errs = []
    for n in (65, 129):
        g = CartesianGrid.square(n)
        rhs = ScalarField(g, 24.0 * g.node_coords()[0] ** 2)
        prob = DirichletProblem.grid_data(
            rhs, lambda th: np.cos(th) ** 4 + np.sin(th) ** 2, g
        )
        sol = solve(prob)
        x1, x2 = g.node_coords()
        ok = np.isfinite(sol.field.values)
        errs.append(float(np.max(np.abs(sol.field.values[ok] - (x1**4 + x2**2)[ok]))))
    assert math.log2(errs[0] / errs[1]) > 1.5


def test_radial_recovery_small_grid(regime2):
    g = CartesianGrid.square(129)
    prob = DirichletProblem.power(
        1.0, 2.0, lambda th: regime2.c_alpha * np.ones_like(th), g
    )
    sol = solve(prob)
    x1, x2 = g.node_coords()
    r = np.hypot(x1, x2)
    ok = np.isfinite(sol.field.values) & (r >= 0.1)
    err = np.max(np.abs(sol.field.values[ok] - regime2.c_alpha * r[ok] ** 3))
    assert err < 2e-3


def test_scheme_consistency_first_order_near_origin(regime2):
    # residual of the exact radial solution under the scheme, h vs h/2
    sups = []
    for n in (129, 257):
        g = CartesianGrid.square(n)
        prob = DirichletProblem.power(
            1.0, 2.0, lambda th: regime2.c_alpha * np.ones_like(th), g
        )
        exact = radial_solution(regime2, g)
        sol = ConvexSolution(field=exact, residual_sup=0.0, iterations=0, convexity_margin=0.0)
        sups.append(residual(sol, prob))
    assert sups[0] / sups[1] >= 1.8


def test_comparison_principle():
    g = CartesianGrid.square(65)
    p1 = DirichletProblem.power(1.5, 0.0, lambda th: 0.5 * np.ones_like(th), g)
    p2 = DirichletProblem.power(1.0, 0.0, lambda th: 0.5 * np.ones_like(th) + 0.01, g)
    u1 = solve(p1).field.values
    u2 = solve(p2).field.values
    ok = np.isfinite(u1)
    assert np.all(u1[ok] <= u2[ok] + 1e-9)


def test_rotation_invariance():
    # 90-degree rotation is unimodular and maps the disc grid to itself
    g = CartesianGrid.square(65)
    bnd1 = lambda th: 0.5 + 0.1 * np.cos(th) + 0.05 * np.sin(2 * th)
    bnd2 = lambda th: 0.5 + 0.1 * np.cos(th - math.pi / 2) + 0.05 * np.sin(2 * (th - math.pi / 2))
    u1 = solve(DirichletProblem.power(1.0, 0.0, bnd1, g)).field.values
    u2 = solve(DirichletProblem.power(1.0, 0.0, bnd2, g)).field.values
    # rotating x -> Rx maps values u2(x) = u1(R^-1 x): array rot90
    assert np.allclose(u2, np.rot90(u1, k=-1), atol=1e-8, equal_nan=True)


def test_cell_average_power_closed_forms():
    # alpha = 0: average is 1 everywhere
    assert cell_average_power((0.0, 0.0), 0.1, 0.0) == pytest.approx(1.0)
    # origin cell, alpha = -1: (8/h^2) * (h/2) * int sec = 3.5255/h
    h = 0.02
    expect = 8.0 * (h / 2) * 0.881373587 / h**2
    assert cell_average_power((0.0, 0.0), h, -1.0) == pytest.approx(expect, rel=1e-6)
    # far from origin the average approaches the point value
    assert cell_average_power((0.5, 0.0), 0.01, -1.0) == pytest.approx(2.0, rel=1e-4)


def test_rhs_validation():
    g = CartesianGrid.square(33)
    with pytest.raises(DomainError):
        DirichletProblem.power(-1.0, 0.0, lambda th: np.ones_like(th), g)
    with pytest.raises(DomainError):
        DirichletProblem.power(1.0, -2.5, lambda th: np.ones_like(th), g)
    bad = ScalarField(g, -np.ones(g.shape))
    with pytest.raises(DomainError):
        DirichletProblem.grid_data(bad, lambda th: np.ones_like(th), g)


def test_boundary_continuity_check():
    g = CartesianGrid.square(33)
    step = lambda th: np.where(np.cos(th) > 0, 1.0, 0.0)
    with pytest.raises(DomainError):
        DirichletProblem.power(1.0, 0.0, step, g)


def test_problem_file_parsing(tmp_path):
    text = """
    # instability-style problem
    alpha=2
    c=1.0
    grid=cartesian:65
    boundary=expr:0.2357022603955158 - 0.05*cos(2*theta)
    """
    prob = parse_problem(text)
    assert prob.grid.nx == 65
    vals = prob.boundary(np.array([0.0, math.pi / 2]))
    assert vals[0] == pytest.approx(0.2357022603955158 - 0.05)
    assert vals[1] == pytest.approx(0.2357022603955158 + 0.05)

    samp = parse_problem("grid=cartesian:33\nboundary=samples:1.0,2.0,1.0,0.0")
    v = samp.boundary(np.array([0.0, math.pi]))
    assert v[0] == pytest.approx(1.0)
    assert v[1] == pytest.approx(1.0)


def test_solution_sidecar(tmp_path, regime2):
    g = CartesianGrid.square(33)
    prob = DirichletProblem.power(1.0, 0.0, lambda th: 0.5 * np.ones_like(th), g)
    sol = solve(prob)
    sol.save(str(tmp_path / "sol"))
    side = json.loads((tmp_path / "sol.json").read_text())
    assert side["iterations"] == sol.iterations
    assert (tmp_path / "sol.field.txt").exists()
