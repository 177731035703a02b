"""Section geometry: sub-level sets, John frames, the measure |x|^alpha dx,
and the radial/non-radial behavior classifier.

A section S_{t,x0} is the sub-level set {u < u(x0) + grad u(x0).(x-x0) + t};
the centered variant T_t re-tilts the plane until the set's center of mass
sits at the origin.  Shapes are normalized by the maximal-area inscribed
ellipse factored as (unimodular lower-triangular A) * (scale r); the growth of
the eccentricity of A as t -> 0 separates radial from non-radial behavior.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize
from scipy.spatial import ConvexHull
from skimage import measure as _skmeasure

from .core import (
    INSIDE,
    DegeneracyError,
    DomainError,
    IterationError,
    Regime,
    ScalarField,
    TruncationError,
)

_BIG = 1e30


@dataclass
class SectionShape:
    """Convex polygon bounding a (centered) section, with its defining data."""

    center: np.ndarray
    t: float
    tilt: np.ndarray
    polygon: np.ndarray  # (M, 2), counterclockwise

    def radii(self):
        """(r_in, r_out): min edge distance and max vertex distance from center."""
        v = self.polygon - self.center
        r_out = float(np.max(np.hypot(v[:, 0], v[:, 1])))
        w = np.roll(v, -1, axis=0)
        edge = w - v
        L2 = np.sum(edge**2, axis=1)
        tproj = np.clip(-np.sum(v * edge, axis=1) / np.maximum(L2, 1e-300), 0.0, 1.0)
        nearest = v + tproj[:, None] * edge
        r_in = float(np.min(np.hypot(nearest[:, 0], nearest[:, 1])))
        return r_in, r_out

    def area(self) -> float:
        v = self.polygon
        w = np.roll(v, -1, axis=0)
        return 0.5 * float(np.sum(v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]))

    def centroid(self) -> np.ndarray:
        v = self.polygon
        w = np.roll(v, -1, axis=0)
        cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        area = 0.5 * np.sum(cross)
        cx = np.sum((v[:, 0] + w[:, 0]) * cross) / (6.0 * area)
        cy = np.sum((v[:, 1] + w[:, 1]) * cross) / (6.0 * area)
        return np.array([cx, cy])


@dataclass
class JohnFrame:
    """Unimodular lower-triangular frame A with scale r: shape ~ A * B_r."""

    A: np.ndarray
    r: float
    sandwich_constant: float

    @property
    def eccentricity(self) -> float:
        s = np.linalg.svd(self.A, compute_uv=False)
        return float(s[0] / s[-1])

    @property
    def norm(self) -> float:
        return float(np.linalg.svd(self.A, compute_uv=False)[0])

    def semi_axes(self):
        """(lengths desc, directions as columns) of the ellipse A*B_r."""
        U, s, _ = np.linalg.svd(self.A)
        return self.r * s, U


@dataclass
class TracePoint:
    t: float
    frame: JohnFrame
    shape: SectionShape


@dataclass
class BehaviorReport:
    verdict: str  # "radial" | "nonradial" | "inconclusive"
    c_fit: Optional[float] = None
    C_fit: Optional[float] = None
    a: Optional[float] = None
    frame: Optional[JohnFrame] = None
    slope_fit: Optional[float] = None
    diagnostics: dict = dc_field(default_factory=dict)


def _gradient_at(field: ScalarField, center) -> np.ndarray:
    h = field.grid.h
    c = np.asarray(center, dtype=float)
    pts = np.array([c + (h, 0), c - (h, 0), c + (0, h), c - (0, h)])
    v = field.sample(pts)
    return np.array([(v[0] - v[1]) / (2 * h), (v[2] - v[3]) / (2 * h)])


def _point_in_contour(contour, point) -> bool:
    x, y = contour[:, 0] - point[0], contour[:, 1] - point[1]
    ang = np.arctan2(y, x)
    d = np.diff(np.unwrap(np.append(ang, ang[0])))
    return abs(np.sum(d)) > math.pi


def section(field: ScalarField, center, t: float, tilt=None) -> SectionShape:
    """Marching-squares sub-level set {u < tangent plane + t}, convex-hulled.

    tilt defaults to the sampled gradient at center (or the stored anchor
    gradient when center is the origin of an anchored field).
    """
    g = field.grid
    if g.kind != "cartesian":
        raise DomainError("sections need a cartesian field (resample polar first)")
    if t <= 0:
        raise DomainError("section height must be positive")
    center = np.asarray(center, dtype=float)
    if tilt is None:
        if field.gradient_origin is not None and np.hypot(*center) < 0.5 * g.h:
            tilt = np.asarray(field.gradient_origin, dtype=float)
        else:
            tilt = _gradient_at(field, center)
    u0 = float(field.sample(center[None, :])[0])
    x1, x2 = g.node_coords()
    phi = field.values - (u0 + tilt[0] * (x1 - center[0]) + tilt[1] * (x2 - center[1]) + t)
    phi = np.where(np.isfinite(phi), phi, _BIG)
    contours = _skmeasure.find_contours(phi, 0.0)
    if not contours:
        raise DegeneracyError("no section contour found")
    fi = (center[0] - g.x0) / g.hx
    fj = (center[1] - g.y0) / g.hy
    chosen = None
    for cont in contours:
        if _point_in_contour(cont, (fi, fj)):
            chosen = cont
            break
    if chosen is None:
        raise DegeneracyError("no contour encloses the section center")
    pts = np.column_stack([g.x0 + chosen[:, 0] * g.hx, g.y0 + chosen[:, 1] * g.hy])
    rr = np.hypot(pts[:, 0], pts[:, 1])
    if np.max(rr) > g.radius - 2.5 * g.h:
        raise TruncationError("section touches the domain boundary")
    hull = ConvexHull(pts)
    return SectionShape(center=center, t=float(t), tilt=np.asarray(tilt, float),
                        polygon=pts[hull.vertices])


def centered_section(
    field: ScalarField,
    t: float,
    max_iter: int = 60,
    damping: float = 0.5,
) -> SectionShape:
    """Section at the origin whose tilt p_t is tuned so the centroid is 0.

    Damped quasi-Newton on the centroid map, with a finite-difference estimate
    of the 2x2 sensitivity; converges when |centroid| < h/4.
    """
    if field.gradient_origin is None:
        raise DomainError("centered sections need an anchored field")
    g = field.grid
    h = g.h
    p = np.asarray(field.gradient_origin, dtype=float).copy()

    def centroid_of(pvec):
        shape = section(field, (0.0, 0.0), t, tilt=pvec)
        return shape.centroid(), shape

    c, shape = centroid_of(p)
    if np.hypot(*c) < 0.25 * h:
        return SectionShape(shape.center, shape.t, p, shape.polygon)
    # FD sensitivity of the centroid wrt the tilt
    r_in, r_out = shape.radii()
    dp = 0.25 * t / max(r_out, h)
    J = np.zeros((2, 2))
    for k in range(2):
        pk = p.copy()
        pk[k] += dp
        ck, _ = centroid_of(pk)
        J[:, k] = (ck - c) / dp
    for _ in range(max_iter):
        try:
            step = np.linalg.solve(J, c)
        except np.linalg.LinAlgError:
            step = c / max(np.linalg.norm(np.diag(J)), 1e-300)
        p_new = p - damping * step
        c_new, shape = centroid_of(p_new)
        if np.hypot(*c_new) < 0.25 * h:
            return SectionShape(shape.center, shape.t, p_new, shape.polygon)
        # Broyden update of the sensitivity
        dpv = p_new - p
        dc = c_new - c
        denom = float(dpv @ dpv)
        if denom > 1e-300:
            J += np.outer(dc - J @ dpv, dpv) / denom
        p, c = p_new, c_new
    raise IterationError("centroid iteration did not converge", last_iterate=p,
                         residual=float(np.hypot(*c)))


def john_ellipse(shape: SectionShape, center=None) -> JohnFrame:
    """Maximal-area inscribed ellipse centered at the designated center.

    Parameterized by a lower-triangular map L (positive diagonal); maximizing
    log det L under the support constraints ||L^T n_i|| <= b_i is a smooth
    concave program solved with SLSQP.  The frame is A = L / sqrt(det L),
    r = sqrt(det L); the sandwich constant comes from a support-function
    comparison on a direction grid.
    """
    if center is None:
        center = shape.center
    v = shape.polygon - np.asarray(center, dtype=float)
    if abs(shape.area()) < 1e-14:
        raise DegeneracyError("degenerate polygon")
    w = np.roll(v, -1, axis=0)
    edges = w - v
    normals = np.column_stack([edges[:, 1], -edges[:, 0]])
    lens = np.hypot(normals[:, 0], normals[:, 1])
    keep = lens > 1e-14
    normals = normals[keep] / lens[keep, None]
    offsets = np.sum(normals * v[keep], axis=1)
    if np.min(offsets) <= 0:
        raise DegeneracyError("designated center lies outside the polygon")

    n1, n2 = normals[:, 0], normals[:, 1]

    def support(x):
        l11, l21, l22 = x
        return np.hypot(l11 * n1 + l21 * n2, l22 * n2)

    def cons_f(x):
        return offsets - support(x)

    def cons_jac(x):
        l11, l21, l22 = x
        s1 = l11 * n1 + l21 * n2
        s2 = l22 * n2
        nrm = np.maximum(np.hypot(s1, s2), 1e-300)
        return -np.column_stack([s1 * n1 / nrm, s1 * n2 / nrm, s2 * n2 / nrm])

    r0 = 0.8 * float(np.min(offsets))
    x0 = np.array([r0, 0.0, r0])
    res = minimize(
        lambda x: -(math.log(x[0]) + math.log(x[2])),
        x0,
        jac=lambda x: np.array([-1.0 / x[0], 0.0, -1.0 / x[2]]),
        constraints=[{"type": "ineq", "fun": cons_f, "jac": cons_jac}],
        bounds=[(1e-12, None), (None, None), (1e-12, None)],
        method="SLSQP",
        options={"maxiter": 400, "ftol": 1e-14},
    )
    if not res.success and cons_f(res.x).min() < -1e-9:
        raise DegeneracyError(f"inscribed-ellipse optimization failed: {res.message}")
    l11, l21, l22 = res.x
    L = np.array([[l11, 0.0], [l21, l22]])
    detL = l11 * l22
    r = math.sqrt(detL)
    A = L / r
    dirs = np.linspace(0.0, 2.0 * math.pi, 256, endpoint=False)
    D = np.column_stack([np.cos(dirs), np.sin(dirs)])
    h_poly = np.max(D @ v.T, axis=1)
    h_ell = r * np.hypot(*(A.T @ D.T))
    k = float(max(np.max(h_poly / h_ell), np.max(h_ell / h_poly), 1.0))
    return JohnFrame(A=A, r=r, sandwich_constant=k)


def normalize_frame(M: np.ndarray) -> np.ndarray:
    """Lower-triangular positive-diagonal representative of an ellipse map M.

    Any M with the same M M^T (i.e. M O for orthogonal O) yields the identical
    result, which is the gauge used throughout.
    """
    S = M @ M.T
    L = np.linalg.cholesky(S)
    return L / math.sqrt(abs(np.linalg.det(L)))


def eccentricity_trace(
    field: ScalarField,
    t_values,
    centered: bool = False,
    min_cells: float = 8.0,
) -> list:
    """John frames of the (centered) sections at each t, largest t first.

    Stops with a warning once a section's short axis is resolved by fewer
    than min_cells grid cells.
    """
    t_values = sorted((float(t) for t in t_values), reverse=True)
    h = field.grid.h
    out = []
    for t in t_values:
        shape = centered_section(field, t) if centered else section(field, (0.0, 0.0), t)
        frame = john_ellipse(shape)
        axes, _ = frame.semi_axes()
        if axes[-1] < min_cells * h:
            warnings.warn(
                f"trace truncated at t={t:g}: short axis {axes[-1]:.3g} under-resolved"
            )
            break
        out.append(TracePoint(t=t, frame=frame, shape=shape))
    if not out:
        raise DomainError("no resolvable sections in the requested range")
    return out


def _slope_fit(ts, eccs):
    x = np.log(1.0 / np.asarray(ts))
    y = np.log(np.asarray(eccs))
    A = np.column_stack([x, np.ones_like(x)])
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    yhat = A @ coef
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return float(coef[0]), r2


def classify_behavior(
    trace: list,
    regime: Regime,
    e_max: float = 10.0,
    slope_strong: float = 0.1,
    slope_weak: float = 0.02,
    r2_min: float = 0.9,
) -> BehaviorReport:
    """Radial/non-radial dichotomy from an eccentricity trace.

    Positive slope means eccentricity growth as t -> 0 (slope is fitted on
    log ecc vs log 1/t over the last decade of t).  The verdict is three-way:
    aggressive growth below the hard threshold but with a clean trend is
    labeled non-radial, weak or noisy trends stay inconclusive rather than
    forcing the dichotomy at finite resolution.
    """
    ts = np.array([p.t for p in trace])
    if math.log10(ts.max() / ts.min()) < 1.5:
        raise DomainError("trace must span at least 1.5 decades in t")
    eccs = np.array([p.frame.eccentricity for p in trace])
    sup_ecc = float(eccs.max())
    last = ts <= ts.min() * 10.0
    slope, r2 = _slope_fit(ts[last], eccs[last])
    diag = {
        "sup_eccentricity": sup_ecc,
        "slope_last_decade": slope,
        "r2": r2,
        "trace_t": ts.tolist(),
        "trace_eccentricity": eccs.tolist(),
    }
    trending = slope >= slope_weak and r2 >= r2_min
    strong = slope >= slope_strong and r2 >= r2_min
    if sup_ecc <= e_max and not trending:
        beta = regime.beta
        c_fit = min(p.t / p.shape.radii()[1] ** beta for p in trace)
        C_fit = max(p.t / p.shape.radii()[0] ** beta for p in trace)
        return BehaviorReport("radial", c_fit=c_fit, C_fit=C_fit,
                              slope_fit=slope, diagnostics=diag)
    if strong or (sup_ecc > e_max and trending):
        smallest = trace[-1]
        alpha = regime.alpha
        axes, dirs = smallest.frame.semi_axes()
        ell1, ell2 = float(axes[0]), float(axes[1])
        beta1 = smallest.t / ell1 ** (2.0 + alpha)
        beta2 = smallest.t / ell2**2
        a = beta1 * (alpha + 2.0) * (alpha + 1.0)
        diag["product_relation"] = 2.0 * (2.0 + alpha) * (1.0 + alpha) * beta1 * beta2
        diag["axis_directions"] = dirs.tolist()
        return BehaviorReport("nonradial", a=float(a), frame=smallest.frame,
                              slope_fit=slope, diagnostics=diag)
    return BehaviorReport("inconclusive", slope_fit=slope, diagnostics=diag)


# ---------------- the measure |x|^alpha dx ----------------

def mu_measure(region, alpha: float) -> float:
    """Integral of |x|^alpha over a convex polygon (or SectionShape).

    Signed fan decomposition from the origin makes the radial integral exact;
    the remaining 1-D edge integrals are adaptively quadratured (with a split
    at the closest approach to the origin, where |x|^alpha peaks).
    """
    poly = region.polygon if isinstance(region, SectionShape) else np.asarray(region, float)
    if alpha <= -2:
        raise DomainError("alpha must be > -2")
    total = 0.0
    p = 2.0 + alpha
    for i in range(len(poly)):
        A = poly[i]
        B = poly[(i + 1) % len(poly)]
        cross = A[0] * B[1] - A[1] * B[0]
        if cross == 0.0:
            continue
        d = B - A
        L2 = float(d @ d)
        if L2 < 1e-300:
            continue

        def f(tau):
            x = A[0] + tau * d[0]
            y = A[1] + tau * d[1]
            return (x * x + y * y) ** (alpha / 2.0)

        tau_star = -float(A @ d) / L2
        pts = [tau_star] if 0.0 < tau_star < 1.0 else None
        val, _ = quad(f, 0.0, 1.0, points=pts, limit=200)
        total += cross * val / p
    return total


class Ellipse:
    """x0 + S * (unit disc); S any invertible 2x2 map."""

    def __init__(self, center, S):
        self.center = np.asarray(center, dtype=float)
        self.S = np.asarray(S, dtype=float)
        M = self.S @ self.S.T
        self.Minv = np.linalg.inv(M)

    def scaled(self, factor: float) -> "Ellipse":
        return Ellipse(self.center, factor * self.S)

    def ray_coeffs(self, d):
        """a r^2 + b r + e <= 0 describes the ray-slice through direction d."""
        a = d @ self.Minv @ d
        b = -2.0 * (self.center @ self.Minv @ d)
        e = self.center @ self.Minv @ self.center - 1.0
        return a, b, e

    def contains_origin(self) -> bool:
        return float(self.center @ self.Minv @ self.center) < 1.0


def _mu_ray_piece(ellipse: Ellipse, alpha: float, theta: float, clip_R: Optional[float]):
    d = np.array([math.cos(theta), math.sin(theta)])
    a, b, e = ellipse.ray_coeffs(d)
    disc = b * b - 4.0 * a * e
    if disc <= 0.0:
        return 0.0
    sq = math.sqrt(disc)
    r_lo = (-b - sq) / (2.0 * a)
    r_hi = (-b + sq) / (2.0 * a)
    r_lo = max(r_lo, 0.0)
    if clip_R is not None:
        r_hi = min(r_hi, clip_R)
    if r_hi <= r_lo:
        return 0.0
    p = 2.0 + alpha
    return (r_hi**p - r_lo**p) / p


def _tangent_angles(ellipse: Ellipse):
    """Directions along which a ray from the origin is tangent to the ellipse."""
    c = ellipse.center
    Mi = ellipse.Minv
    e = float(c @ Mi @ c) - 1.0
    Q = np.outer(Mi @ c, Mi @ c) - e * Mi
    # d^T Q d = 0; solve the homogeneous quadratic for the direction
    qa, qb, qc = Q[1, 1], 2.0 * Q[0, 1], Q[0, 0]
    if abs(qa) < 1e-300:
        if abs(qb) < 1e-300:
            return []
        taus = [-qc / qb]
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc < 0.0:
            return []
        taus = [(-qb + math.sqrt(disc)) / (2 * qa), (-qb - math.sqrt(disc)) / (2 * qa)]
    return sorted(math.atan2(t, 1.0) for t in taus)


def mu_ellipse(ellipse: Ellipse, alpha: float, clip_R: Optional[float] = None) -> float:
    """mu(ellipse [cap B_clip]) by exact radial reduction + angular quadrature."""
    if alpha <= -2:
        raise DomainError("alpha must be > -2")
    f = lambda th: _mu_ray_piece(ellipse, alpha, th, clip_R)
    if ellipse.contains_origin():
        # smooth positive integrand all around; break at the axis directions
        # (thin ellipses concentrate there) and their dyadic neighbourhoods
        U, s, _ = np.linalg.svd(ellipse.S)
        phi = math.atan2(U[1, 0], U[0, 0])
        aspect = s[1] / s[0]
        bps = set()
        for base in (phi, phi + math.pi):
            for k in range(0, 40):
                w = aspect * 2.0**k
                if w > math.pi:
                    break
                bps.update((base - w, base + w))
        bps.update((phi, phi + math.pi))
        grid = sorted(((b % (2 * math.pi)) for b in bps)) or [0.0]
        grid = [0.0] + [g for g in grid if 0 < g < 2 * math.pi] + [2 * math.pi]
        total = 0.0
        for lo, hi in zip(grid[:-1], grid[1:]):
            if hi - lo < 1e-15:
                continue
            v, _ = quad(f, lo, hi, limit=200)
            total += v
        return total
    angles = _tangent_angles(ellipse)
    if not angles:
        return 0.0
    # the angular support is the window between the two tangent lines that
    # contains the center direction
    phi_c = math.atan2(ellipse.center[1], ellipse.center[0])
    cands = []
    for t1 in angles:
        for cand in (t1, t1 + math.pi):
            cands.append(cand)
    rel = sorted(((c - phi_c + math.pi) % (2 * math.pi)) - math.pi for c in cands)
    lo = phi_c + max(r for r in rel if r <= 0)
    hi = phi_c + min(r for r in rel if r >= 0)
    if hi - lo <= 0:
        return 0.0
    mid = 0.5 * (lo + hi)
    total = 0.0
    for sgn, edge in ((1.0, lo), (-1.0, hi)):
        smax = math.sqrt(abs(mid - edge))

        def fs(s):
            return 2.0 * s * f(edge + sgn * s * s)

        v, _ = quad(fs, 0.0, smax, limit=200)
        total += v
    return total


def doubling_check(alpha: float, families) -> dict:
    """Ratios mu(x0+E) / mu((x0+2E) cap B_1) for a list of (center, S) pairs."""
    ratios = []
    for center, S in families:
        E = Ellipse(center, S)
        num = mu_ellipse(E, alpha)
        den = mu_ellipse(E.scaled(2.0), alpha, clip_R=1.0)
        if den <= 0:
            raise DegeneracyError("doubled ellipse has no mass inside the disc")
        ratios.append(num / den)
    return {"ratios": ratios, "infimum": min(ratios)}
