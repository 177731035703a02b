"""Homogeneous solutions w = r^beta g(theta) via the envelope/period-integral machinery.

The angular profile g solves

    beta * g * (g'' + beta*g) - (beta-1) * g'^2 = 1/(beta-1),

and on any interval where g increases, g' = sqrt(2 h_c(g)) for the one-parameter
envelope family h_c.  The length of the increasing arc is the period integral
I_c; a profile tiling the circle with k periods exists iff I_c = pi/k for some
admissible c.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .core import (
    CartesianGrid,
    DiscGrid,
    DomainError,
    AccuracyError,
    Regime,
    ScalarField,
    field_from_function,
    regime_from_alpha,
)


class EmptyPositivityError(DomainError):
    """The envelope has no positivity window (c <= c0)."""


def envelope_value(t, c: float, regime: Regime):
    """h_c(t), half of  c*t^(2-2/beta) - beta^2 t^2 - (beta-1)^-2.

    The positivity window {h_c > 0} carries one increasing arc of g.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise DomainError("envelope argument must be positive")
    b = regime.beta
    val = 0.5 * (c * t ** (2.0 - 2.0 / b) - b**2 * t**2 - 1.0 / (b - 1.0) ** 2)
    return float(val) if val.ndim == 0 else val


def _envelope_slope(t: float, c: float, regime: Regime) -> float:
    b = regime.beta
    return 0.5 * (c * (2.0 - 2.0 / b) * t ** (1.0 - 2.0 / b) - 2.0 * b**2 * t)


@lru_cache(maxsize=None)
def _tangency_cached(alpha: float):
    regime = regime_from_alpha(alpha)
    b = regime.beta

    # eliminate c via the slope condition c*(1-1/b)*t^(-2/b) = b^2 and solve
    # f1(t) = f2(t) for the tangency abscissa by bisection
    def mismatch(t):
        c_t = b**2 * t ** (2.0 / b) / (1.0 - 1.0 / b)
        return c_t * t ** (2.0 - 2.0 / b) - (b**2 * t**2 + 1.0 / (b - 1.0) ** 2)

    lo, hi = 1e-8, 1.0
    while mismatch(hi) < 0.0:
        hi *= 2.0
        if hi > 1e12:
            raise AccuracyError("tangency bracket failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mismatch(mid) < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    t0 = 0.5 * (lo + hi)
    c0 = b**2 * t0 ** (2.0 / b) / (1.0 - 1.0 / b)
    return c0, t0


def tangency_c0(regime: Regime):
    """(c0, t0): the parameter and abscissa at which the envelope window closes.

    t0 coincides with c_alpha (the constant solution of the profile ODE).
    """
    return _tangency_cached(regime.alpha)


def envelope_roots(c: float, regime: Regime):
    """The two roots 0 < t_minus <= t_plus of h_c, by bracketing + bisection."""
    c0, t0 = tangency_c0(regime)
    if c <= c0:
        raise EmptyPositivityError(
            f"positivity window empty: c={c!r} <= c0={c0!r} (alpha={regime.alpha})"
        )
    if envelope_value(t0, c, regime) <= 0.0:
        raise AccuracyError("envelope unexpectedly non-positive at the tangency point")

    lo = t0
    while envelope_value(lo, c, regime) > 0.0:
        lo *= 0.5
        if lo < 1e-300:
            raise AccuracyError("left root bracket failed")
    # left root lies in (lo, t0): h(lo) < 0 < h(t0)
    t_minus = _bisect_signed(lambda t: envelope_value(t, c, regime), lo, t0)
    hi = t0
    while envelope_value(hi, c, regime) > 0.0:
        hi *= 2.0
        if hi > 1e300:
            raise AccuracyError("right root bracket failed")
    t_plus = _bisect_signed(lambda t: envelope_value(t, c, regime), hi, t0)
    return min(t_minus, t_plus), max(t_minus, t_plus)


def _bisect_signed(f, neg, pos):
    """Bisection with f(neg) < 0 < f(pos); endpoints may be on either side."""
    for _ in range(200):
        mid = 0.5 * (neg + pos)
        if f(mid) > 0.0:
            pos = mid
        else:
            neg = mid
        if abs(pos - neg) <= 1e-14 * max(abs(pos), abs(neg)):
            break
    return 0.5 * (neg + pos)


@dataclass(frozen=True)
class ProfileEnvelope:
    """Envelope parameter c with its positivity window [t_minus, t_plus]."""

    c: float
    regime: Regime
    t_minus: float
    t_plus: float

    @classmethod
    def build(cls, c: float, regime: Regime) -> "ProfileEnvelope":
        tm, tp = envelope_roots(c, regime)
        return cls(c=c, regime=regime, t_minus=tm, t_plus=tp)

    def value(self, t):
        return envelope_value(t, self.c, self.regime)

    def slope(self, t):
        return _envelope_slope(t, self.c, self.regime)


def _edge_integrand(env: ProfileEnvelope, left: bool):
    """Integrand after t = t_minus + s^2 (resp. t_plus - s^2).

    The simple sqrt-zero at the endpoint becomes a smooth value
    2/sqrt(2|h'|); below a tiny cut the analytic slope limit is used to dodge
    root-residual cancellation.
    """
    tm, tp = env.t_minus, env.t_plus
    root = tm if left else tp
    slope = env.slope(root) * (1.0 if left else -1.0)
    if slope <= 0.0:
        raise AccuracyError("envelope root is not simple; cannot desingularize")
    limit_val = 2.0 / math.sqrt(2.0 * slope)
    cut = 1e-7 * math.sqrt(max(root, 1e-300))

    def f(s):
        if s < cut:
            return limit_val
        h = env.value(root + s * s if left else root - s * s)
        if h <= 0.0:
            return limit_val
        return 2.0 * s / math.sqrt(2.0 * h)

    return f


def _split_points(env: ProfileEnvelope):
    """(t_a, t_b): where the endpoint substitutions hand over to the interior.

    Narrow windows use a single split at the geometric mean; wide windows keep
    the substitutions local to the roots and cover the interior separately.
    """
    tm, tp = env.t_minus, env.t_plus
    if tp / tm < 16.0:
        mid = math.sqrt(tm * tp)
        if not tm < mid < tp:
            mid = 0.5 * (tm + tp)
        return mid, mid
    return 2.0 * tm, 0.5 * tp


def period_integral(c: float, regime: Regime, tol: float = 1e-10) -> float:
    """I_c: the improper integral of 1/sqrt(2 h_c) over the positivity window."""
    env = ProfileEnvelope.build(c, regime)
    return _period_integral_env(env, tol)


def _noise_floor(env: ProfileEnvelope) -> float:
    """Relative fp noise of the integrand near the window apex.

    h_c is a difference of O(1) terms, so close to the tangency its values
    carry absolute rounding noise ~eps * term scale; the quadrature cannot be
    asked for more than that relative accuracy.
    """
    tm, tp = env.t_minus, env.t_plus
    b = env.regime.beta
    t_apex = 0.5 * (tm + tp)
    h_apex = max(env.value(t_apex), env.value(math.sqrt(tm * tp)), 1e-300)
    scale = env.c * t_apex ** (2.0 - 2.0 / b) + b**2 * t_apex**2 + 1.0 / (b - 1.0) ** 2
    return 2.2e-16 * scale / h_apex


def _period_integral_env(env: ProfileEnvelope, tol: float = 1e-10) -> float:
    tm, tp = env.t_minus, env.t_plus
    ta, tb = _split_points(env)
    eff = min(1e-3, max(tol, 50.0 * _noise_floor(env)))
    fl = _edge_integrand(env, left=True)
    fr = _edge_integrand(env, left=False)
    il, el = quad(fl, 0.0, math.sqrt(ta - tm), epsabs=1e-13, epsrel=eff, limit=300)
    ir, er = quad(fr, 0.0, math.sqrt(tp - tb), epsabs=1e-13, epsrel=eff, limit=300)
    im = em = 0.0
    if tb > ta:
        # interior in tau = log t: smooth, modest range even for huge windows
        def fmid(tau):
            t = math.exp(tau)
            return t / math.sqrt(2.0 * env.value(t))

        im, em = quad(fmid, math.log(ta), math.log(tb), epsabs=1e-13, epsrel=eff, limit=300)
    total = il + im + ir
    err = el + em + er
    if err > max(300.0 * eff * abs(total), 1e-6):
        raise AccuracyError(
            f"period quadrature did not converge (err~{err:.2e})", estimate=total
        )
    return total


@dataclass
class ProfileSearch:
    """Outcome of a period-matching search: root(s) of I_c = pi/k, if any."""

    k: int
    regime: Regime
    c_star: Optional[float]
    roots: list
    I_range: tuple
    c_range: tuple


def find_profile(
    k: int,
    regime: Regime,
    c_max_factor: float = 1e6,
    n_scan: int = 120,
    tol: float = 1e-10,
) -> ProfileSearch:
    """Search c > c0 for I_c = pi/k by sign-change scan + bracketed root refinement.

    Monotonicity of I_c is not assumed: every sign change on the log-spaced
    c-grid is refined and all roots are reported; c_star is the smallest.
    Absence of a root is a valid outcome (c_star None, observed range attached).
    """
    if k < 1:
        raise DomainError("k must be a positive integer")
    c0, _ = tangency_c0(regime)
    target = math.pi / k
    if abs(regime.beta - 2.0) < 1e-9:
        # quadratic envelope: I_c = pi/2 identically, so the sign-change
        # criterion never brackets an interior root
        half_pi = 0.5 * math.pi
        return ProfileSearch(
            k=k, regime=regime, c_star=None, roots=[],
            I_range=(half_pi, half_pi), c_range=(c0, c0 * c_max_factor),
        )
    deltas = np.logspace(-6, math.log10(max(c_max_factor - 1.0, 1e-5)), n_scan)
    cs = c0 * (1.0 + deltas)
    vals = np.array([period_integral(c, regime, tol) for c in cs])
    fs = vals - target
    roots = []
    # treat the whole scan as flat if the spread is at quadrature noise
    if vals.max() - vals.min() > 1e-6:
        for i in range(n_scan - 1):
            if fs[i] == 0.0:
                roots.append(cs[i])
            elif fs[i] * fs[i + 1] < 0.0:
                r = brentq(
                    lambda c: period_integral(c, regime, tol) - target,
                    cs[i],
                    cs[i + 1],
                    xtol=1e-14,
                    rtol=1e-12,
                )
                roots.append(float(r))
    roots = sorted(roots)
    return ProfileSearch(
        k=k,
        regime=regime,
        c_star=roots[0] if roots else None,
        roots=roots,
        I_range=(float(vals.min()), float(vals.max())),
        c_range=(float(cs[0]), float(cs[-1])),
    )


@dataclass
class HomogeneousProfile:
    """Sampled angular profile over one principal period [0, 2*I_c).

    g is even about its minimum at theta = 0 and increases on the first
    half-period; k-fold tiling of the principal period covers the circle.
    """

    envelope: ProfileEnvelope
    k: int
    period: float
    thetas: np.ndarray
    g: np.ndarray
    gprime: np.ndarray

    @property
    def g_samples(self):
        return np.column_stack([self.thetas, self.g, self.gprime])

    @property
    def is_radial(self) -> bool:
        return self.envelope.t_plus - self.envelope.t_minus <= 1e-12 * self.envelope.t_plus

    def interpolant(self) -> CubicSpline:
        th = np.append(self.thetas, self.period)
        gg = np.append(self.g, self.g[0])
        return CubicSpline(th, gg, bc_type="periodic")

    def ode_residual_max(self) -> float:
        """Sup-norm profile-ODE residual using spectral derivatives of the samples.

        This differentiates the *sampled* g, so it measures reconstruction
        accuracy rather than restating the envelope identity.
        """
        b = self.envelope.regime.beta
        n = len(self.g)
        freqs = 2.0 * math.pi * np.fft.rfftfreq(n, d=self.period / n)
        gh = np.fft.rfft(self.g)
        gp = np.fft.irfft(1j * freqs * gh, n)
        gpp = np.fft.irfft(-(freqs**2) * gh, n)
        res = b * self.g * (gpp + b * self.g) - (b - 1.0) * gp**2 - 1.0 / (b - 1.0)
        return float(np.max(np.abs(res)))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _cumulative(f, grid):
    """Cumulative integral of f on the given grid by per-panel 10-point GL.

    Accumulated in extended precision so the prefix sums do not pick up
    O(n_panels * eps) rounding drift (the profile residual check amplifies any
    sample noise by the squared spectral wavenumber).
    """
    inc = np.empty(len(grid) - 1, dtype=np.longdouble)
    for j in range(len(grid) - 1):
        a, b = grid[j], grid[j + 1]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        inc[j] = half * math.fsum(
            w * f(mid + half * x) for x, w in zip(_GL_NODES, _GL_WEIGHTS)
        )
    out = np.zeros(len(grid), dtype=np.longdouble)
    np.cumsum(inc, out=out[1:])
    return out.astype(float)


def _table_theta(p_grid, th_grid, f, p):
    """theta at parameter p, anchored to the nearest table node by one GL panel.

    Accurate to rounding; used wherever branch calibration constants are
    needed (spline evaluation error there would shift a whole branch and leave
    steps at the handover points).
    """
    j = int(np.searchsorted(p_grid, p))
    j = min(max(j, 1), len(p_grid) - 1)
    base_p, base_th = p_grid[j - 1], th_grid[j - 1]
    mid, half = 0.5 * (base_p + p), 0.5 * (p - base_p)
    return base_th + half * math.fsum(
        w * f(mid + half * x) for x, w in zip(_GL_NODES, _GL_WEIGHTS)
    )


def _branch_tables(env: ProfileEnvelope, n_panels: int = 400):
    """Monotone inversion tables for theta(t) across the window.

    Segments overlap so that every handover point is interior to the splines
    of both neighbours (spline error at a table end would otherwise leave a
    high-frequency kink in the reconstructed profile).  Returns
    (I, handovers, tables) where tables map theta to the branch parameter.
    """
    tm, tp = env.t_minus, env.t_plus
    ta, tb = _split_points(env)
    fl = _edge_integrand(env, left=True)
    fr = _edge_integrand(env, left=False)
    wide = tb > ta

    # extended coverage past the handover points
    if wide:
        ta_ext = min(2.0 * ta, math.sqrt(ta * tb))
        tb_ext = max(0.5 * tb, math.sqrt(ta * tb))
        mid_lo, mid_hi = 0.5 * (tm + ta), 0.5 * (tb + tp)
    else:
        ta_ext = ta + 0.4 * (tp - ta)
        tb_ext = tb - 0.4 * (tb - tm)

    sL = np.linspace(0.0, math.sqrt(ta_ext - tm), n_panels + 1)
    thL = _cumulative(fl, sL)
    theta_a = _table_theta(sL, thL, fl, math.sqrt(ta - tm))

    sR = np.linspace(0.0, math.sqrt(tp - tb_ext), n_panels + 1)
    phR = _cumulative(fr, sR)
    phi_b = _table_theta(sR, phR, fr, math.sqrt(tp - tb))

    tables = {"edge_l": (thL, sL), "edge_r": (phR, sR)}
    if wide:
        def fmid(tau):
            t = math.exp(tau)
            return t / math.sqrt(2.0 * env.value(t))

        taus = np.linspace(math.log(mid_lo), math.log(mid_hi), n_panels + 1)
        thM = _cumulative(fmid, taus)
        # anchor the mid table so it agrees with theta_a at t = ta
        off = theta_a - _table_theta(taus, thM, fmid, math.log(ta))
        theta_b = off + _table_theta(taus, thM, fmid, math.log(tb))
        tables["mid"] = (thM + off, taus)
    else:
        theta_b = theta_a
    I = theta_b + phi_b
    return I, (theta_a, theta_b), tables


def reconstruct_profile(
    c_star: float,
    k: int,
    regime: Regime,
    n_samples: int = 2048,
    period_tol: float = 1e-5,
) -> HomogeneousProfile:
    """Invert theta(g) on the increasing arc and extend by reflection/periodicity.

    The samples are uniform in theta over one principal period (so spectral
    residual checks apply).  For the degenerate window c_star ~ c0 the constant
    (radial) profile is returned.
    """
    c0, t0 = tangency_c0(regime)
    if c_star < c0:
        raise EmptyPositivityError(f"c_star={c_star} below tangency c0={c0}")
    if c_star <= c0 * (1.0 + 1e-12):
        period = 2.0 * math.pi / k
        thetas = np.arange(n_samples) * period / n_samples
        g = np.full(n_samples, regime.c_alpha)
        env = ProfileEnvelope(c=c0, regime=regime, t_minus=t0, t_plus=t0)
        return HomogeneousProfile(env, k, period, thetas, g, np.zeros(n_samples))

    env = ProfileEnvelope.build(c_star, regime)
    half, (theta_a, theta_b), tables = _branch_tables(env)
    if abs(k * 2.0 * half - 2.0 * math.pi) > period_tol * 2.0 * math.pi:
        raise DomainError(
            f"profile does not tile the circle: k*2*I = {k * 2 * half!r} != 2*pi"
        )
    inv = {
        kind: CubicSpline(th_grid, p_grid) for kind, (th_grid, p_grid) in tables.items()
    }
    fl = _edge_integrand(env, left=True)
    fr = _edge_integrand(env, left=False)

    def fmid(tau_log):
        t = math.exp(tau_log)
        return t / math.sqrt(2.0 * env.value(t))

    integrands = {"edge_l": fl, "edge_r": fr, "mid": fmid}

    def polish(kind, p, target):
        """Newton-polish the branch parameter so theta(p) = target exactly.

        theta is re-evaluated from the nearest table node by one GL panel, so
        the polished samples are accurate to rounding rather than to the
        inversion-spline error (which the spectral residual check amplifies).
        """
        th_grid, p_grid = tables[kind]
        f = integrands[kind]
        for _ in range(3):
            th = _table_theta(p_grid, th_grid, f, p)
            step = (th - target) / f(p)
            p = p - step
            if abs(step) < 1e-15 * max(1.0, abs(p)):
                break
        return p

    def g_of(tau):
        if tau <= theta_a:
            s = float(inv["edge_l"](max(tau, 0.0)))
            s = max(polish("edge_l", s, tau), 0.0)
            return env.t_minus + s * s
        if tau <= theta_b:
            p = polish("mid", float(inv["mid"](tau)), tau)
            return math.exp(p)
        phi = max(half - tau, 0.0)
        s = float(inv["edge_r"](phi))
        s = max(polish("edge_r", s, phi), 0.0)
        return env.t_plus - s * s

    period = 2.0 * half
    thetas = np.arange(n_samples) * period / n_samples
    g = np.empty(n_samples)
    gp = np.empty(n_samples)
    for i, th in enumerate(thetas):
        tau = th if th <= half else period - th  # even reflection about the min
        gval = min(max(g_of(tau), env.t_minus), env.t_plus)
        g[i] = gval
        hv = max(env.value(gval), 0.0)
        gp[i] = math.sqrt(2.0 * hv) * (1.0 if th <= half else -1.0)
    return HomogeneousProfile(env, k, period, thetas, g, gp)


def assemble_homogeneous(profile: HomogeneousProfile, grid: DiscGrid) -> ScalarField:
    """w(r, theta) = r^beta * g(theta), with g cubically interpolated and tiled."""
    beta = profile.envelope.regime.beta
    gfun = profile.interpolant()
    period = profile.period

    def fn(x1, x2):
        r = np.hypot(x1, x2)
        th = np.mod(np.arctan2(x2, x1), 2.0 * math.pi)
        return r**beta * gfun(np.mod(th, period))

    return field_from_function(grid, fn, anchored=True)


CATALOG_COLUMNS = [
    "alpha", "beta", "k", "exists", "c_star", "I_c", "t_minus", "t_plus", "ode_residual_max",
]


def write_catalog_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CATALOG_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow(row)
