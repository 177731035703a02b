"""Partial Legendre transform and the degenerate linear equation it produces.

Transforming u only in the x2 variable (y1 = x1, y2 = du/dx2) turns
det D^2 u = h(x1) into the linear degenerate-elliptic equation
w_11 + h(y1) w_22 = 0 for the dual w = u*; solutions of that equation admit a
four-term expansion at the origin whose remainder improves by a power delta.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import splu

from .core import (
    INSIDE,
    CartesianGrid,
    DegeneracyError,
    DomainError,
    FitError,
    ScalarField,
)


@dataclass
class PartialLegendrePair:
    """Primal field, its dual on a rectangular (y1, y2) grid, and the y2 map.

    domain_map holds y2 = du/dx2 at every primal node (y1 is x1 itself), i.e.
    the node-wise correspondence x <-> y.
    """

    primal: ScalarField
    dual: ScalarField
    domain_map: np.ndarray


def _column_derivative(x2, u):
    """du/dx2 along one column: centered interior, 2nd-order one-sided ends."""
    h = x2[1] - x2[0]
    d = np.empty_like(u)
    d[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    d[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
    d[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * h)
    return d


def partial_legendre(field: ScalarField, n_dual: Optional[int] = None) -> PartialLegendrePair:
    """Column-wise Legendre transform in x2.

    Every vertical slice must be strictly convex (du/dx2 strictly increasing);
    the dual values x2*y2 - u are exact samples of u* at the discrete slopes,
    then resampled onto a uniform rectangular y2 grid (cubic, NaN outside each
    column's slope range).
    """
    g = field.grid
    if g.kind != "cartesian":
        raise DomainError("partial Legendre transform expects a cartesian grid")
    vals = field.values
    ys = g.ys()
    ny = n_dual or g.ny
    y2_map = np.full(g.shape, np.nan)
    knots = []
    lo, hi = np.inf, -np.inf
    for i in range(g.nx):
        col = vals[i]
        ok = np.isfinite(col)
        if ok.sum() < 4:
            knots.append(None)
            continue
        j0, j1 = np.argmax(ok), len(ok) - np.argmax(ok[::-1])
        if not ok[j0:j1].all():
            raise DegeneracyError(f"column x1={g.xs()[i]:.6g} has interior holes")
        x2 = ys[j0:j1]
        u = col[j0:j1]
        slope = _column_derivative(x2, u)
        if np.any(np.diff(slope) <= 0.0):
            raise DegeneracyError(
                f"column x1={g.xs()[i]:.6g} is not strictly convex in x2"
            )
        star = x2 * slope - u
        y2_map[i, j0:j1] = slope
        knots.append((slope, star))
        lo = min(lo, slope[0])
        hi = max(hi, slope[-1])
    if not np.isfinite(lo) or hi <= lo:
        raise DegeneracyError("empty dual domain")
    hy = (hi - lo) / (ny - 1)
    dual_grid = CartesianGrid(
        g.nx, ny, g.x0, lo, g.hx, hy,
        radius=math.hypot(max(abs(g.x0), abs(g.x0 + (g.nx - 1) * g.hx)), max(abs(lo), abs(hi))) + 1.0,
    )
    y2s = dual_grid.ys()
    dvals = np.full((g.nx, ny), np.nan)
    for i, kn in enumerate(knots):
        if kn is None:
            continue
        slope, star = kn
        spl = CubicSpline(slope, star)
        sel = (y2s >= slope[0]) & (y2s <= slope[-1])
        dvals[i, sel] = spl(y2s[sel])
    dual_grid._mask = np.where(np.isfinite(dvals), INSIDE, 0).astype(np.uint8)
    return PartialLegendrePair(
        primal=field,
        dual=ScalarField(dual_grid, dvals),
        domain_map=y2_map,
    )


def involution_error(field: ScalarField) -> float:
    """sup |(u*)* - u| over the common grid nodes (cubic resample in between)."""
    pair = partial_legendre(field)
    back = partial_legendre(pair.dual)
    g = field.grid
    bg = back.dual.grid
    ys = g.ys()
    err = 0.0
    for i in range(g.nx):
        col = field.values[i]
        ok = np.isfinite(col)
        if ok.sum() < 4:
            continue
        bcol = back.dual.values[i]
        bok = np.isfinite(bcol)
        if bok.sum() < 4:
            continue
        y2b = bg.ys()[bok]
        spl = CubicSpline(y2b, bcol[bok])
        # compare strictly inside the reconstructed column to avoid end splines
        pad = 3.0 * bg.hy
        sel = ok & (ys >= y2b[0] + pad) & (ys <= y2b[-1] - pad)
        if not np.any(sel):
            continue
        err = max(err, float(np.max(np.abs(spl(ys[sel]) - col[sel]))))
    return err


def hat_average_power(y: float, alpha: float, h_plus: float, h_minus: float) -> float:
    """Average of |s|^alpha against the (possibly asymmetric) FD hat at y.

    Chosen so the scheme's y1-second-difference of |y1|^(2+alpha)/((2+a)(1+a))
    equals the coefficient exactly, making the model dual solution discrete.
    """
    p = 2.0 + alpha

    def G(s):
        return abs(s) ** p / (p * (p - 1.0))

    gp = (G(y + h_plus) - G(y)) / h_plus
    gm = (G(y - h_minus) - G(y)) / h_minus
    return 2.0 * (gp + gm) / (h_plus + h_minus)


def solve_degenerate_linear(
    alpha: float,
    c: float,
    boundary: Callable,
    grid: CartesianGrid,
) -> ScalarField:
    """Monotone 5-point solve of w_11 + c*|y1|^alpha w_22 = 0 on the disc.

    Dirichlet data (a function of theta) lives on the exact circle via
    shortened legs; the degenerate coefficient is the FD-hat average of
    |y1|^alpha, finite for alpha > -1 (the solver admits alpha > 0).
    """
    if alpha <= 0.0:
        raise DomainError("the degenerate linear solver requires alpha > 0")
    if c <= 0.0:
        raise DomainError("coefficient c must be positive")
    if grid.kind != "cartesian":
        raise DomainError("expect a cartesian disc grid")
    R = grid.radius
    x1, x2 = grid.node_coords()
    inside = grid.mask == INSIDE
    n = int(inside.sum())
    idx_map = -np.ones(grid.shape, dtype=np.int64)
    idx_map[inside] = np.arange(n)
    ix, iy = np.nonzero(inside)
    X, Y = x1[inside], x2[inside]

    def leg(d):
        dx, dy = d[0] * grid.hx, d[1] * grid.hy
        ii, jj = ix + d[0], iy + d[1]
        okn = (ii >= 0) & (ii < grid.nx) & (jj >= 0) & (jj < grid.ny)
        nb = np.where(okn, idx_map[np.clip(ii, 0, grid.nx - 1), np.clip(jj, 0, grid.ny - 1)], -1)
        L = np.full(n, math.hypot(dx, dy))
        bval = np.zeros(n)
        cut = nb < 0
        if np.any(cut):
            xc, yc = X[cut], Y[cut]
            a = dx * dx + dy * dy
            b = 2.0 * (xc * dx + yc * dy)
            cc = xc * xc + yc * yc - R * R
            s = np.clip((-b + np.sqrt(np.maximum(b * b - 4 * a * cc, 0.0))) / (2 * a), 1e-3, 1.0)
            th = np.mod(np.arctan2(yc + s * dy, xc + s * dx), 2 * math.pi)
            bval[cut] = boundary(th)
            L[cut] = s * math.hypot(dx, dy)
        return nb, bval, L

    xP, xPv, xPL = leg((1, 0))
    xM, xMv, xML = leg((-1, 0))
    yP, yPv, yPL = leg((0, 1))
    yM, yMv, yML = leg((0, -1))
    coeff = np.array(
        [c * hat_average_power(X[k], alpha, xPL[k], xML[k]) for k in range(n)]
    )

    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    diag = np.zeros(n)
    arange = np.arange(n)
    for (nb, bv, LP), (nbm, bvm, LM), k in (
        ((xP, xPv, xPL), (xM, xMv, xML), np.ones(n)),
        ((yP, yPv, yPL), (yM, yMv, yML), coeff),
    ):
        cP = 2.0 * k / ((LP + LM) * LP)
        cM = 2.0 * k / ((LP + LM) * LM)
        diag += -(cP + cM)
        for nbr, bval, cc in ((nb, bv, cP), (nbm, bvm, cM)):
            okn = nbr >= 0
            rows.append(arange[okn])
            cols.append(nbr[okn])
            vals.append(cc[okn])
            rhs[~okn] -= cc[~okn] * bval[~okn]
    rows.append(arange)
    cols.append(arange)
    vals.append(diag)
    A = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsc()
    w = splu(A, permc_spec="COLAMD").solve(rhs)
    out = np.full(grid.shape, np.nan)
    out[inside] = w
    return ScalarField(grid, out)


@dataclass
class ExpansionReport:
    """Fit of the four-term near-origin model for solutions of Lw = 0."""

    a0: float
    a1: np.ndarray
    a2: float
    a3: float
    remainder_exponent: float
    fit_window: tuple
    window_radii: list = dc_field(default_factory=list)
    window_residuals: list = dc_field(default_factory=list)
    noise_floor: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "a0": self.a0,
                "a1": list(self.a1),
                "a2": self.a2,
                "a3": self.a3,
                "remainder_exponent": self.remainder_exponent,
                "fit_window": list(self.fit_window),
                "window_radii": self.window_radii,
                "window_residuals": self.window_residuals,
                "noise_floor": self.noise_floor,
            },
            indent=2,
        )


def expansion_coefficients(
    field: ScalarField,
    alpha: float,
    rho_max: float = 0.45,
    min_nodes: int = 40,
) -> ExpansionReport:
    """Least-squares fit of w ~ a0 + a1.y + a2 y1 y2 + a3 (y2^2/2 - |y1|^(2+a)/((2+a)(1+a))).

    Windows are anisotropic sub-level sets of the natural modulus
    m = y2^2 + |y1|^(2+alpha), dyadic in rho (window = {m < rho^2}); the final
    coefficients come from the smallest usable window and the remainder
    exponent from the decay of the sup residual across windows.
    """
    g = field.grid
    x1, x2 = g.node_coords()
    vals = field.values
    ok = np.isfinite(vals)
    p = 2.0 + alpha
    modulus = x2**2 + np.abs(x1) ** p
    block = 0.5 * x2**2 - np.abs(x1) ** p / (p * (p - 1.0))

    rhos, fits, residuals = [], [], []
    rho = rho_max
    while True:
        sel = ok & (modulus < rho**2)
        cnt = int(sel.sum())
        if cnt < min_nodes:
            break
        A = np.column_stack(
            [np.ones(cnt), x1[sel], x2[sel], (x1 * x2)[sel], block[sel]]
        )
        scale = np.maximum(np.linalg.norm(A, axis=0), 1e-300)
        coef, _, rank, _ = np.linalg.lstsq(A / scale, vals[sel], rcond=None)
        if rank < 5:
            if not fits:
                raise FitError("expansion fit is rank deficient on every window")
            break
        coef = coef / scale
        rhos.append(rho)
        fits.append(coef)
        rho *= 0.5
    if not fits:
        raise FitError("no usable fit window (field too small or too masked)")

    final = fits[-1]
    resid = []
    for rho_j in rhos:
        sel = ok & (modulus < rho_j**2)
        A = np.column_stack(
            [np.ones(int(sel.sum())), x1[sel], x2[sel], (x1 * x2)[sel], block[sel]]
        )
        resid.append(float(np.max(np.abs(A @ final - vals[sel]))))

    scale = float(np.nanmax(np.abs(vals)))
    noise = all(r <= 1e-12 * max(scale, 1.0) for r in resid)
    if noise or len(rhos) < 3:
        exponent = float("nan")
    else:
        lr = np.log(np.asarray(rhos))
        lres = np.log(np.maximum(resid, 1e-300))
        exponent = float(np.polyfit(lr, lres, 1)[0] / 2.0)
    return ExpansionReport(
        a0=float(final[0]),
        a1=np.array([final[1], final[2]]),
        a2=float(final[3]),
        a3=float(final[4]),
        remainder_exponent=exponent,
        fit_window=(rhos[-1], rhos[0]),
        window_radii=[float(r) for r in rhos],
        window_residuals=resid,
        noise_floor=noise,
    )
