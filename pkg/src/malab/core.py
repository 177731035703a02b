"""Regime constants, disc grids, scalar fields, and the FD Hessian-determinant oracle.

Everything downstream represents a solution candidate as a ``ScalarField`` on a
``DiscGrid`` and validates it against ``hessian_determinant_fd``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

# mask codes
OUTSIDE = 0
INSIDE = 1
BOUNDARY = 2


class MalabError(Exception):
    """Base class for all package errors."""


class DomainError(MalabError, ValueError):
    """Parameter outside its admissible range."""


class OutOfDomainError(MalabError):
    """A stencil or sample point leaves the grid's valid region."""


class DegeneracyError(MalabError):
    """An operation hit a degenerate configuration (non-convex slice, flat shape, ...)."""


class IterationError(MalabError):
    """An iterative procedure failed to converge."""

    def __init__(self, msg, last_iterate=None, residual=None):
        super().__init__(msg)
        self.last_iterate = last_iterate
        self.residual = residual


class AccuracyError(MalabError):
    """Requested accuracy not achieved; carries the best estimate."""

    def __init__(self, msg, estimate=None):
        super().__init__(msg)
        self.estimate = estimate


class ResolutionError(MalabError):
    """Source data is under-resolved for the requested operation."""


class TruncationError(MalabError):
    """A section or region leaves the computational domain."""


class FitError(MalabError):
    """A least-squares fit was too ill-conditioned to trust."""


@dataclass(frozen=True)
class Regime:
    """All constants derived from the right-hand-side exponent alpha > -2.

    beta is the homogeneity degree 2 + alpha/2, gamma = 2/beta - 1 is the
    exponent entering the J-invariant, c_alpha the coefficient of the radial
    solution c_alpha * |x|^beta, and J0 the J-value of that solution.
    """

    alpha: float
    beta: float
    gamma: float
    c_alpha: float
    J0: float


def regime_from_alpha(alpha: float) -> Regime:
    """Build the constant pack for a given exponent.

    Raises DomainError unless alpha > -2 (equivalently beta > 1, which keeps
    c_alpha real and positive).
    """
    alpha = float(alpha)
    if not alpha > -2.0:
        raise DomainError(f"alpha must be > -2, got {alpha}")
    beta = 2.0 + alpha / 2.0
    gamma = 2.0 / beta - 1.0
    c_alpha = 1.0 / (beta * math.sqrt(beta - 1.0))
    j0 = c_alpha * beta**2 * (c_alpha * beta * (beta - 1.0)) ** gamma
    return Regime(alpha=alpha, beta=beta, gamma=gamma, c_alpha=c_alpha, J0=j0)


class DiscGrid:
    """Base class for grids covering (a subset of) the disc of given radius."""

    kind: str
    radius: float
    shape: tuple

    def node_coords(self):
        """Return (X1, X2) arrays of node coordinates, shaped like values."""
        raise NotImplementedError

    @property
    def h(self) -> float:
        raise NotImplementedError


class CartesianGrid(DiscGrid):
    """Tensor grid on a rectangle; nodes inside the disc are flagged INSIDE.

    The factory ``CartesianGrid.square(n, radius)`` builds the usual uniform
    n x n grid on [-radius, radius]^2.  A general rectangle (used for partial
    Legendre duals) is built directly; its mask may be overridden.
    """

    kind = "cartesian"

    def __init__(self, nx, ny, x0, y0, hx, hy, radius, mask=None):
        self.nx = int(nx)
        self.ny = int(ny)
        self.x0 = float(x0)
        self.y0 = float(y0)
        self.hx = float(hx)
        self.hy = float(hy)
        self.radius = float(radius)
        self.shape = (self.nx, self.ny)
        self._mask = mask

    @classmethod
    def square(cls, n: int, radius: float = 1.0) -> "CartesianGrid":
        n = int(n)
        if n < 5:
            raise DomainError("cartesian grid needs n >= 5")
        h = 2.0 * radius / (n - 1)
        return cls(n, n, -radius, -radius, h, h, radius)

    @property
    def h(self) -> float:
        return self.hx

    def xs(self):
        return self.x0 + self.hx * np.arange(self.nx)

    def ys(self):
        return self.y0 + self.hy * np.arange(self.ny)

    def node_coords(self):
        return np.meshgrid(self.xs(), self.ys(), indexing="ij")

    @property
    def mask(self):
        if self._mask is None:
            x1, x2 = self.node_coords()
            r = np.hypot(x1, x2)
            m = np.full(self.shape, OUTSIDE, dtype=np.uint8)
            m[r < self.radius] = INSIDE
            ring = (r >= self.radius) & (r < self.radius + 1.5 * math.hypot(self.hx, self.hy))
            m[ring] = BOUNDARY
            self._mask = m
        return self._mask

    def index_of(self, point):
        i = int(round((point[0] - self.x0) / self.hx))
        j = int(round((point[1] - self.y0) / self.hy))
        return i, j


class PolarGrid(DiscGrid):
    """Uniform (r, theta) grid on the annulus [r_min, radius] x [0, 2pi).

    The punctured core r < r_min is excluded on purpose: the equation is
    degenerate at the origin and origin asymptotics are probed by blow-up
    rescaling, never by differencing across the singularity.
    """

    kind = "polar"

    def __init__(self, n_r, n_theta, r_min, radius=1.0):
        if not 0.0 < r_min < radius:
            raise DomainError("need 0 < r_min < radius")
        self.n_r = int(n_r)
        self.n_theta = int(n_theta)
        self.r_min = float(r_min)
        self.radius = float(radius)
        self.shape = (self.n_r, self.n_theta)
        self.h_r = (self.radius - self.r_min) / (self.n_r - 1)
        self.h_theta = 2.0 * math.pi / self.n_theta

    @classmethod
    def standard(cls, n_r: int, n_theta: int, radius: float = 1.0, r_min: Optional[float] = None) -> "PolarGrid":
        # default core exclusion: two radial cells
        if r_min is None:
            r_min = 2.0 * radius / (n_r - 1)
        return cls(n_r, n_theta, r_min, radius)

    @property
    def h(self) -> float:
        return self.h_r

    def rs(self):
        return self.r_min + self.h_r * np.arange(self.n_r)

    def thetas(self):
        return self.h_theta * np.arange(self.n_theta)

    def node_coords(self):
        r, t = np.meshgrid(self.rs(), self.thetas(), indexing="ij")
        return r * np.cos(t), r * np.sin(t)

    @property
    def mask(self):
        m = np.full(self.shape, INSIDE, dtype=np.uint8)
        m[-1, :] = BOUNDARY
        return m


def _lagrange_cubic_weights(u):
    """Weights for 4-point cubic interpolation at offset u in [0,1] past node 1."""
    w0 = -u * (u - 1.0) * (u - 2.0) / 6.0
    w1 = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0
    w2 = -(u + 1.0) * u * (u - 2.0) / 2.0
    w3 = (u + 1.0) * u * (u - 1.0) / 6.0
    return w0, w1, w2, w3


@dataclass
class ScalarField:
    """A discrete function on a DiscGrid.

    values has the grid's shape; NaN marks OUTSIDE nodes on cartesian grids.
    gradient_origin, when set, records the anchoring data (u(0), grad u(0))
    having been subtracted so that u(0) = 0, grad u(0) = gradient_origin.
    """

    grid: DiscGrid
    values: np.ndarray
    gradient_origin: Optional[np.ndarray] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != tuple(self.grid.shape):
            raise DomainError("values shape does not match grid")
        if self.gradient_origin is not None:
            self.gradient_origin = np.asarray(self.gradient_origin, dtype=float)

    # ---------------- sampling ----------------

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Cubic (4x4 Lagrange) interpolation at the given (N,2) cartesian points.

        Raises OutOfDomainError if an interpolation patch leaves the valid part
        of the grid.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        g = self.grid
        if g.kind == "cartesian":
            fx = (pts[:, 0] - g.x0) / g.hx
            fy = (pts[:, 1] - g.y0) / g.hy
            return self._sample_cubic(fx, fy, wrap_axis1=False)
        else:
            r = np.hypot(pts[:, 0], pts[:, 1])
            th = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * math.pi)
            fr = (r - g.r_min) / g.h_r
            ft = th / g.h_theta
            return self._sample_cubic(fr, ft, wrap_axis1=True)

    def _sample_cubic(self, f0, f1, wrap_axis1):
        n0, n1 = self.values.shape
        if np.any(f0 < -1e-6) or np.any(f0 > n0 - 1 + 1e-6):
            raise OutOfDomainError("sample point outside grid (axis 0)")
        if not wrap_axis1 and (np.any(f1 < -1e-6) or np.any(f1 > n1 - 1 + 1e-6)):
            raise OutOfDomainError("sample point outside grid (axis 1)")
        f0 = np.clip(f0, 0.0, n0 - 1.0)
        i0 = np.clip(np.floor(f0).astype(int), 1, n0 - 3)
        if not wrap_axis1:
            f1 = np.clip(f1, 0.0, n1 - 1.0)
            i1 = np.clip(np.floor(f1).astype(int), 1, n1 - 3)
        else:
            i1 = np.floor(f1).astype(int)
        u = f0 - i0
        v = f1 - i1
        w0 = np.stack(_lagrange_cubic_weights(u), axis=-1)  # (N,4)
        w1 = np.stack(_lagrange_cubic_weights(v), axis=-1)
        idx0 = i0[:, None] + np.arange(-1, 3)[None, :]
        idx1 = i1[:, None] + np.arange(-1, 3)[None, :]
        if wrap_axis1:
            idx1 = np.mod(idx1, n1)
        patch = self.values[idx0[:, :, None], idx1[:, None, :]]  # (N,4,4)
        if np.any(~np.isfinite(patch)):
            raise OutOfDomainError("interpolation patch touches invalid nodes")
        return np.einsum("na,nab,nb->n", w0, patch, w1)

    # ---------------- convexity ----------------

    def convexity_margin(self) -> float:
        """Smallest grid-line second difference divided by h^2 over valid nodes."""
        g = self.grid
        vals = self.values
        worst = np.inf
        if g.kind == "cartesian":
            ok = np.isfinite(vals)
            for axis, h in ((0, g.hx), (1, g.hy)):
                vp = np.roll(vals, -1, axis=axis)
                vm = np.roll(vals, 1, axis=axis)
                okk = ok & np.roll(ok, -1, axis=axis) & np.roll(ok, 1, axis=axis)
                okk[0, :] = okk[-1, :] = okk[:, 0] = okk[:, -1] = False
                d2 = (vp - 2 * vals + vm)[okk] / h**2
                if d2.size:
                    worst = min(worst, float(d2.min()))
        else:
            d2 = (vals[2:, :] - 2 * vals[1:-1, :] + vals[:-2, :]) / g.h_r**2
            worst = min(worst, float(d2.min()))
        return worst

    def is_convex(self, tol: float = 1e-8) -> bool:
        return self.convexity_margin() >= -tol * max(1.0, float(np.nanmax(np.abs(self.values))))

    # ---------------- serialization ----------------

    def to_text(self) -> str:
        g = self.grid
        buf = io.StringIO()
        if g.kind == "cartesian":
            buf.write(
                f"grid cartesian nx={g.nx} ny={g.ny} x0={g.x0!r} y0={g.y0!r} "
                f"hx={g.hx!r} hy={g.hy!r} radius={g.radius!r}\n"
            )
        else:
            buf.write(
                f"grid polar n_r={g.n_r} n_theta={g.n_theta} r_min={g.r_min!r} radius={g.radius!r}\n"
            )
        if self.gradient_origin is not None:
            buf.write(f"gradient_origin {self.gradient_origin[0]!r} {self.gradient_origin[1]!r}\n")
        for v in self.values.ravel(order="C"):
            buf.write(f"{v!r}\n")
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @staticmethod
    def from_text(text: str) -> "ScalarField":
        lines = text.strip().splitlines()
        head = lines[0].split()
        if head[0] != "grid":
            raise DomainError("missing grid header")
        params = dict(tok.split("=", 1) for tok in head[2:])
        if head[1] == "cartesian":
            grid = CartesianGrid(
                int(params["nx"]), int(params["ny"]),
                float(params["x0"]), float(params["y0"]),
                float(params["hx"]), float(params["hy"]), float(params["radius"]),
            )
        elif head[1] == "polar":
            grid = PolarGrid(
                int(params["n_r"]), int(params["n_theta"]),
                float(params["r_min"]), float(params["radius"]),
            )
        else:
            raise DomainError(f"unknown grid kind {head[1]!r}")
        k = 1
        gradient_origin = None
        if lines[k].startswith("gradient_origin"):
            _, gx, gy = lines[k].split()
            gradient_origin = np.array([float(gx), float(gy)])
            k += 1
        vals = np.array([float(s) for s in lines[k:]])
        vals = vals.reshape(grid.shape)
        return ScalarField(grid, vals, gradient_origin)

    @staticmethod
    def load(path) -> "ScalarField":
        with open(path) as fh:
            return ScalarField.from_text(fh.read())

    def to_csv(self, path) -> None:
        """x1,x2,u rows for every valid node."""
        x1, x2 = self.grid.node_coords()
        ok = np.isfinite(self.values)
        with open(path, "w") as fh:
            fh.write("x1,x2,u\n")
            for a, b, v in zip(x1[ok].ravel(), x2[ok].ravel(), self.values[ok].ravel()):
                fh.write(f"{a!r},{b!r},{v!r}\n")


def field_from_function(grid: DiscGrid, fn: Callable, anchored: bool = False) -> ScalarField:
    """Sample fn(x1, x2) at the grid nodes; OUTSIDE cartesian nodes become NaN."""
    x1, x2 = grid.node_coords()
    vals = np.asarray(fn(x1, x2), dtype=float)
    if grid.kind == "cartesian":
        vals = np.where(grid.mask == OUTSIDE, np.nan, vals)
    return ScalarField(grid, vals, np.zeros(2) if anchored else None)


def radial_solution(regime: Regime, grid: DiscGrid) -> ScalarField:
    """The radial solution c_alpha * |x|^beta on the given grid, anchored at 0."""
    return field_from_function(
        grid, lambda x1, x2: regime.c_alpha * np.hypot(x1, x2) ** regime.beta, anchored=True
    )


def hessian_determinant_fd(field: ScalarField, point) -> float:
    """Centered-difference det D^2 u at the grid node nearest to point.

    Cartesian grids use the standard 9-point stencil
    (u11*u22 - u12^2); polar grids use
    u_rr * (u_thth / r^2 + u_r / r) - (u_rth / r - u_th / r^2)^2.
    """
    g = field.grid
    vals = field.values
    if g.kind == "cartesian":
        i, j = g.index_of(point)
        if not (1 <= i < g.nx - 1 and 1 <= j < g.ny - 1):
            raise OutOfDomainError("stencil leaves the grid")
        patch = vals[i - 1 : i + 2, j - 1 : j + 2]
        if np.any(~np.isfinite(patch)):
            raise OutOfDomainError("stencil touches invalid nodes")
        u11 = (patch[2, 1] - 2 * patch[1, 1] + patch[0, 1]) / g.hx**2
        u22 = (patch[1, 2] - 2 * patch[1, 1] + patch[1, 0]) / g.hy**2
        u12 = (patch[2, 2] + patch[0, 0] - patch[2, 0] - patch[0, 2]) / (4 * g.hx * g.hy)
        return float(u11 * u22 - u12**2)
    else:
        r = math.hypot(point[0], point[1])
        th = math.atan2(point[1], point[0]) % (2 * math.pi)
        i = int(round((r - g.r_min) / g.h_r))
        j = int(round(th / g.h_theta)) % g.n_theta
        if not 1 <= i < g.n_r - 1:
            raise OutOfDomainError("radial stencil leaves the grid")
        ri = g.r_min + i * g.h_r
        jp, jm = (j + 1) % g.n_theta, (j - 1) % g.n_theta
        u_rr = (vals[i + 1, j] - 2 * vals[i, j] + vals[i - 1, j]) / g.h_r**2
        u_r = (vals[i + 1, j] - vals[i - 1, j]) / (2 * g.h_r)
        u_tt = (vals[i, jp] - 2 * vals[i, j] + vals[i, jm]) / g.h_theta**2
        u_t = (vals[i, jp] - vals[i, jm]) / (2 * g.h_theta)
        u_rt = (
            vals[i + 1, jp] + vals[i - 1, jm] - vals[i + 1, jm] - vals[i - 1, jp]
        ) / (4 * g.h_r * g.h_theta)
        return float(u_rr * (u_tt / ri**2 + u_r / ri) - (u_rt / ri - u_t / ri**2) ** 2)


def resample_to_cartesian(field: ScalarField, n: int, radius: Optional[float] = None) -> ScalarField:
    """Resample any field onto a square cartesian disc grid via cubic interpolation.

    For polar sources the target radius shrinks to the source annulus; nodes
    below the source's inner radius are left NaN (OUTSIDE-like) so downstream
    stencils fail loudly rather than extrapolate.
    """
    src = field.grid
    if radius is None:
        radius = src.radius * (1.0 - 2.0 / (n - 1))
    tgt = CartesianGrid.square(n, radius)
    x1, x2 = tgt.node_coords()
    out = np.full(tgt.shape, np.nan)
    r = np.hypot(x1, x2)
    ok = tgt.mask == INSIDE
    if src.kind == "polar":
        ok &= (r >= src.r_min + 1.5 * src.h_r) & (r <= src.radius - 1.5 * src.h_r)
    else:
        ok &= r <= src.radius - 2.0 * max(src.hx, src.hy)
    pts = np.column_stack([x1[ok], x2[ok]])
    out[ok] = field.sample(pts)
    return ScalarField(tgt, out, field.gradient_origin)
