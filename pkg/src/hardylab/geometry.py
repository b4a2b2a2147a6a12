"""Domains with exact distance calculus, boundary-adapted balls and weighted volumes.

Every domain exposes a signed distance (positive inside), the nearest
boundary point, and closed-form derivatives of ``d`` where they exist.
Boundary-adapted balls are realised through an exact chart at the
nearest boundary point: tangential coordinates in the tangent plane and
the offset ``a(y') - y_N`` measured along the outward normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog
from scipy.special import gamma as gamma_fn
from scipy.stats import qmc

__all__ = [
    "DomainError",
    "SingularPointError",
    "RadiusError",
    "Domain",
    "Ball",
    "Box",
    "ConvexPolygon",
    "Ellipse",
    "make_domain",
    "distance",
    "distance_calculus",
    "WeightParams",
    "BallSpec",
    "make_ball",
    "weighted_volume",
    "radial_integral_exact",
    "euclidean_radial_integral",
    "volume_shape",
    "VolumeFit",
    "volume_envelope_fit",
    "radial_volume_fit",
    "DoublingResult",
    "doubling_constant",
    "sample_balls",
    "CondResult",
    "check_condition_cond",
    "sphere_area",
]


class DomainError(ValueError):
    """A point lies outside the closed domain."""


class SingularPointError(ValueError):
    """The distance function is not differentiable at the requested point."""


class RadiusError(ValueError):
    """A ball radius exceeds the chart scale of the domain."""


def sphere_area(dim):
    """Surface area of the unit sphere in ``R^dim``."""
    return 2.0 * math.pi ** (dim / 2.0) / gamma_fn(dim / 2.0)


def _points(x, dim):
    p = np.asarray(x, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    if p.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {p.shape}")
    return p, single


def _unwrap(a, single):
    return a[0] if single else a


class Domain:
    """Base class of the bounded convex domains.

    Subclasses implement ``signed_distance``, ``nearest_point`` and
    ``bounding_box``; optional closed forms for the gradient and the
    Laplacian of ``d`` override the finite-difference fallback.
    """

    kind = "domain"
    dim = 0
    convex = True
    fd_step = 1e-5

    # -- required interface -------------------------------------------------
    def signed_distance(self, x):
        raise NotImplementedError

    def nearest_point(self, x):
        raise NotImplementedError

    def bounding_box(self):
        raise NotImplementedError

    def params(self):
        raise NotImplementedError

    # -- derived quantities -------------------------------------------------
    def contains(self, x):
        return self.signed_distance(x) > 0.0

    @property
    def contains_origin(self):
        return bool(self.signed_distance(np.zeros(self.dim)) > 0.0)

    @property
    def inradius(self):
        raise NotImplementedError

    @property
    def chart_scale(self):
        """Largest admissible ball radius, a quarter of the inradius."""
        return 0.25 * self.inradius

    @property
    def max_distance(self):
        """``sup d`` over the domain; equals the inradius for convex sets."""
        return self.inradius

    @property
    def reflection_symmetric(self):
        """True if the domain is invariant under every ``x_j -> -x_j``."""
        return False

    def ridge(self, x, tol=1e-9):
        """Boolean mask of points with more than one nearest boundary point."""
        return np.zeros(len(np.atleast_2d(x)), dtype=bool)

    def grad_lap(self, x):
        """Closed-form ``(grad d, lap d)``; finite differences by default."""
        return self._fd_grad_lap(x)

    def _fd_grad_lap(self, x):
        p, _ = _points(x, self.dim)
        h = self.fd_step
        grad = np.empty_like(p)
        lap = np.zeros(len(p))
        d0 = self.signed_distance(p)
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            dp = self.signed_distance(p + e)
            dm = self.signed_distance(p - e)
            grad[:, j] = (dp - dm) / (2 * h)
            lap += (dp - 2 * d0 + dm) / h**2
        return grad, lap

    # -- chart support ------------------------------------------------------
    def outward_normal(self, foot):
        """Unit outward normal at boundary points ``foot``."""
        raise NotImplementedError

    def chart_height(self, foot, normal, frame, yt):
        """Height ``a(y')`` of the boundary over the tangent plane at ``foot``.

        The height is measured along the outward ``normal``; flat faces
        return zero.
        """
        return np.zeros(len(yt))

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.params().items() if k != "kind")
        return f"{type(self).__name__}({args})"


def _quadric_height(Q, foot, normal, frame, yt):
    """Root nearest zero of ``z^T Q z = 1`` along ``foot + frame y' + s n``."""
    base = foot[None, :] + yt @ frame.T
    a = normal @ Q @ normal
    b = 2.0 * (base @ Q @ normal)
    c = np.einsum("ij,jk,ik->i", base, Q, base) - 1.0
    disc = b * b - 4 * a * c
    out = np.full(len(yt), np.nan)
    ok = disc >= 0
    sq = np.sqrt(disc[ok])
    # stable form of the root closest to zero
    q = -0.5 * (b[ok] + np.copysign(sq, b[ok]))
    r1 = np.where(q != 0, c[ok] / np.where(q != 0, q, 1.0), 0.0)
    out[ok] = r1
    return out


@dataclass(frozen=True, repr=False)
class Ball(Domain):
    """Euclidean ball of radius ``radius`` centred at the origin in ``R^dim``."""

    radius: float = 1.0
    dim: int = 3
    kind = "ball"

    def __post_init__(self):
        if self.radius <= 0 or self.dim < 1:
            raise ValueError("ball needs radius > 0 and dim >= 1")

    def params(self):
        return {"kind": "ball", "radius": float(self.radius), "dim": int(self.dim)}

    def signed_distance(self, x):
        p, single = _points(x, self.dim)
        return _unwrap(self.radius - np.linalg.norm(p, axis=1), single)

    def nearest_point(self, x):
        p, single = _points(x, self.dim)
        r = np.linalg.norm(p, axis=1)
        if np.any(r == 0):
            raise SingularPointError("the centre of the ball has no unique nearest boundary point")
        return _unwrap(self.radius * p / r[:, None], single)

    def bounding_box(self):
        return -self.radius * np.ones(self.dim), self.radius * np.ones(self.dim)

    @property
    def inradius(self):
        return float(self.radius)

    @property
    def reflection_symmetric(self):
        return True

    def ridge(self, x, tol=1e-9):
        p = np.atleast_2d(np.asarray(x, float))
        return np.linalg.norm(p, axis=1) <= tol * self.radius

    def grad_lap(self, x):
        p, _ = _points(x, self.dim)
        r = np.linalg.norm(p, axis=1)
        return -p / r[:, None], -(self.dim - 1) / r

    def outward_normal(self, foot):
        f = np.atleast_2d(foot)
        return f / np.linalg.norm(f, axis=1)[:, None]

    def chart_height(self, foot, normal, frame, yt):
        Q = np.eye(self.dim) / self.radius**2
        return _quadric_height(Q, foot, normal, frame, yt)

    def axis_crossing(self, x, axis, sign):
        """Exact distance from ``x`` to the sphere along ``sign * e_axis``."""
        p = np.atleast_2d(x)
        b = sign * p[:, axis]
        c = np.sum(p * p, axis=1) - self.radius**2
        return -b + np.sqrt(np.maximum(b * b - c, 0.0))


@dataclass(frozen=True, repr=False)
class Box(Domain):
    """Axis-aligned box ``prod (lower_j, upper_j)``."""

    lower: tuple = (0.0, 0.0)
    upper: tuple = (1.0, 1.0)
    kind = "box"

    def __post_init__(self):
        lo = np.asarray(self.lower, float)
        hi = np.asarray(self.upper, float)
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(hi <= lo):
            raise ValueError("box needs matching lower < upper corners")
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))

    @property
    def dim(self):
        return len(self.lower)

    def params(self):
        return {"kind": "box", "lower": list(self.lower), "upper": list(self.upper)}

    def _face_dist(self, p):
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.concatenate([p - lo, hi - p], axis=1)

    def signed_distance(self, x):
        p, single = _points(x, self.dim)
        return _unwrap(self._face_dist(p).min(axis=1), single)

    def _nearest_face(self, p):
        return self._face_dist(p).argmin(axis=1)

    def nearest_point(self, x):
        p, single = _points(x, self.dim)
        k = self._nearest_face(p)
        q = p.copy()
        rows = np.arange(len(p))
        axis = k % self.dim
        val = np.where(k < self.dim, np.asarray(self.lower)[axis], np.asarray(self.upper)[axis])
        q[rows, axis] = val
        return _unwrap(q, single)

    def bounding_box(self):
        return np.asarray(self.lower), np.asarray(self.upper)

    @property
    def inradius(self):
        return 0.5 * float(np.min(np.asarray(self.upper) - np.asarray(self.lower)))

    @property
    def reflection_symmetric(self):
        return bool(np.allclose(np.asarray(self.lower), -np.asarray(self.upper)))

    def ridge(self, x, tol=1e-9):
        p = np.atleast_2d(np.asarray(x, float))
        fd = np.sort(self._face_dist(p), axis=1)
        return fd[:, 1] - fd[:, 0] <= tol

    def grad_lap(self, x):
        p, _ = _points(x, self.dim)
        k = self._nearest_face(p)
        g = np.zeros_like(p)
        g[np.arange(len(p)), k % self.dim] = np.where(k < self.dim, 1.0, -1.0)
        return g, np.zeros(len(p))

    def outward_normal(self, foot):
        f = np.atleast_2d(foot)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        dl = np.abs(f - lo)
        dh = np.abs(hi - f)
        fd = np.concatenate([dl, dh], axis=1)
        k = fd.argmin(axis=1)
        n = np.zeros_like(f)
        n[np.arange(len(f)), k % self.dim] = np.where(k < self.dim, -1.0, 1.0)
        return n

    def axis_crossing(self, x, axis, sign):
        p = np.atleast_2d(x)
        if sign > 0:
            return self.upper[axis] - p[:, axis]
        return p[:, axis] - self.lower[axis]


@dataclass(frozen=True, repr=False)
class ConvexPolygon(Domain):
    """Convex polygon in the plane given by its vertices."""

    vertices: tuple = ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0))
    kind = "polygon"
    dim = 2
    _normals: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _offsets: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("polygon needs at least three planar vertices")
        e = np.roll(v, -1, axis=0) - v
        cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
        if np.all(cross < 0):
            v = v[::-1]
            e = np.roll(v, -1, axis=0) - v
        elif not np.all(cross > 0):
            raise ValueError("polygon vertices are not in strictly convex position")
        lens = np.linalg.norm(e, axis=1)
        normals = np.stack([-e[:, 1], e[:, 0]], axis=1) / lens[:, None]  # inward for CCW
        offsets = np.einsum("ij,ij->i", normals, v)
        object.__setattr__(self, "vertices", tuple(tuple(float(c) for c in row) for row in v))
        object.__setattr__(self, "_normals", normals)
        object.__setattr__(self, "_offsets", offsets)

    def params(self):
        return {"kind": "polygon", "vertices": [list(v) for v in self.vertices]}

    def _line_dist(self, p):
        return p @ self._normals.T - self._offsets[None, :]

    def signed_distance(self, x):
        p, single = _points(x, 2)
        return _unwrap(self._line_dist(p).min(axis=1), single)

    def nearest_point(self, x):
        p, single = _points(x, 2)
        ld = self._line_dist(p)
        k = ld.argmin(axis=1)
        return _unwrap(p - ld[np.arange(len(p)), k][:, None] * self._normals[k], single)

    def bounding_box(self):
        v = np.asarray(self.vertices)
        return v.min(axis=0), v.max(axis=0)

    @property
    def inradius(self):
        # Chebyshev centre: maximise t subject to n_i . x - c_i >= t
        n = self._normals
        A = np.hstack([-n, np.ones((len(n), 1))])
        res = linprog(c=[0.0, 0.0, -1.0], A_ub=A, b_ub=-self._offsets, bounds=[(None, None)] * 3)
        return float(res.x[2])

    def ridge(self, x, tol=1e-9):
        p = np.atleast_2d(np.asarray(x, float))
        ld = np.sort(self._line_dist(p), axis=1)
        return ld[:, 1] - ld[:, 0] <= tol

    def outward_normal(self, foot):
        f = np.atleast_2d(foot)
        k = np.abs(self._line_dist(f)).argmin(axis=1)
        return -self._normals[k]

    def axis_crossing(self, x, axis, sign):
        p = np.atleast_2d(x)
        e = np.zeros(2)
        e[axis] = sign
        ne = self._normals @ e
        ld = self._line_dist(p)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(ne[None, :] < 0, ld / -ne[None, :], np.inf)
        return s.min(axis=1)


@dataclass(frozen=True, repr=False)
class Ellipse(Domain):
    """Ellipse ``(x/a)^2 + (y/b)^2 < 1`` centred at the origin."""

    a: float = 1.0
    b: float = 0.5
    kind = "ellipse"
    dim = 2
    bisection_steps = 200

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("ellipse semi-axes must be positive")

    def params(self):
        return {"kind": "ellipse", "a": float(self.a), "b": float(self.b)}

    def _foot(self, p):
        """Nearest boundary point and unsigned distance, vectorised."""
        swap = self.b > self.a
        a, b = (self.b, self.a) if swap else (self.a, self.b)
        q = p[:, ::-1] if swap else p
        u = np.abs(q[:, 0])
        v = np.abs(q[:, 1])
        inside = (u / a) ** 2 + (v / b) ** 2 < 1.0
        foot = np.empty_like(q)
        # ridge branch: interior points on the major axis close to the centre
        on_axis = (v == 0) & (u < (a * a - b * b) / a) if a > b else np.zeros(len(q), bool)
        if a == b:
            r = np.hypot(u, v)
            safe = np.where(r > 0, r, 1.0)
            foot[:, 0] = np.where(r > 0, a * u / safe, a)
            foot[:, 1] = np.where(r > 0, a * v / safe, 0.0)
        else:
            x0 = a * a * u / (a * a - b * b)
            foot[on_axis, 0] = x0[on_axis]
            foot[on_axis, 1] = b * np.sqrt(np.maximum(1 - (x0[on_axis] / a) ** 2, 0.0))
            rest = ~on_axis
            uu, vv = u[rest], v[rest]
            lo = np.full(uu.shape, -b * b)
            hi = np.maximum(a * np.hypot(uu, vv), 1.0) * 2 * max(a, b)

            def F(t):
                return (a * uu / (t + a * a)) ** 2 + (b * vv / (t + b * b)) ** 2 - 1.0

            for _ in range(self.bisection_steps):
                mid = 0.5 * (lo + hi)
                pos = F(mid) > 0
                lo = np.where(pos, mid, lo)
                hi = np.where(pos, hi, mid)
                if np.all(hi - lo <= 4e-16 * np.maximum(np.abs(hi), b * b)):
                    break
            t = 0.5 * (lo + hi)
            foot[rest, 0] = a * a * uu / (t + a * a)
            foot[rest, 1] = b * b * vv / (t + b * b)
        foot[:, 0] *= np.where(q[:, 0] < 0, -1.0, 1.0)
        foot[:, 1] *= np.where(q[:, 1] < 0, -1.0, 1.0)
        dist = np.linalg.norm(q - foot, axis=1)
        if swap:
            foot = foot[:, ::-1]
        return foot, np.where(inside, dist, -dist)

    def signed_distance(self, x):
        p, single = _points(x, 2)
        return _unwrap(self._foot(p)[1], single)

    def nearest_point(self, x):
        p, single = _points(x, 2)
        if np.any(self.ridge(p, tol=0.0)):
            raise SingularPointError("point on the ellipse ridge has two nearest boundary points")
        return _unwrap(self._foot(p)[0], single)

    def bounding_box(self):
        return -np.array([self.a, self.b]), np.array([self.a, self.b])

    @property
    def inradius(self):
        return float(min(self.a, self.b))

    @property
    def reflection_symmetric(self):
        return True

    def ridge(self, x, tol=1e-9):
        p = np.atleast_2d(np.asarray(x, float))
        a, b = self.a, self.b
        if a == b:
            return np.linalg.norm(p, axis=1) <= tol
        if a > b:
            return (np.abs(p[:, 1]) <= tol) & (np.abs(p[:, 0]) < (a * a - b * b) / a)
        return (np.abs(p[:, 0]) <= tol) & (np.abs(p[:, 1]) < (b * b - a * a) / b)

    def outward_normal(self, foot):
        f = np.atleast_2d(foot)
        g = np.stack([f[:, 0] / self.a**2, f[:, 1] / self.b**2], axis=1)
        return g / np.linalg.norm(g, axis=1)[:, None]

    def grad_lap(self, x):
        p, _ = _points(x, 2)
        foot, d = self._foot(p)
        n = self.outward_normal(foot)
        a, b = self.a, self.b
        kappa = 1.0 / (a * a * b * b * ((foot[:, 0] / a**2) ** 2 + (foot[:, 1] / b**2) ** 2) ** 1.5)
        return -n, -kappa / (1.0 - kappa * d)

    def chart_height(self, foot, normal, frame, yt):
        Q = np.diag([1.0 / self.a**2, 1.0 / self.b**2])
        return _quadric_height(Q, foot, normal, frame, yt)


def make_domain(kind, **kw):
    """Construct a domain from a kind name and keyword parameters."""
    kind = kind.lower()
    if kind == "ball":
        return Ball(radius=float(kw.get("radius", 1.0)), dim=int(kw.get("dim", 3)))
    if kind == "box":
        if "lower" in kw or "upper" in kw:
            return Box(tuple(kw["lower"]), tuple(kw["upper"]))
        sides = kw.get("sides", [1.0, 1.0])
        return Box(tuple(0.0 for _ in sides), tuple(float(s) for s in sides))
    if kind in ("polygon", "convex-polygon"):
        return ConvexPolygon(tuple(tuple(v) for v in kw["vertices"]))
    if kind == "ellipse":
        return Ellipse(float(kw["a"]), float(kw["b"]))
    raise ValueError(f"unknown domain kind {kind!r}")


def distance(domain, x, tol=1e-12):
    """Distance to the boundary; raises ``DomainError`` outside the closure."""
    sd = np.asarray(domain.signed_distance(x))
    if np.any(sd < -tol):
        raise DomainError("point outside the closed domain")
    return np.maximum(sd, 0.0)


def distance_calculus(domain, x):
    """Gradient and Laplacian of ``d`` at interior points off the ridge."""
    p, single = _points(x, domain.dim)
    sd = domain.signed_distance(p)
    if np.any(sd <= 0):
        raise DomainError("distance calculus needs interior points")
    if np.any(domain.ridge(p)):
        raise SingularPointError("point lies on the ridge of the distance function")
    grad, lap = domain.grad_lap(p)
    return _unwrap(grad, single), _unwrap(lap, single)


# ---------------------------------------------------------------------------
# boundary-adapted balls


@dataclass(frozen=True)
class WeightParams:
    """Exponents of the weight ``|y|^lam d(y)^alpha``."""

    lam: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        if self.lam > 0:
            raise ValueError("origin exponent must be <= 0")
        if self.alpha < 0:
            raise ValueError("boundary exponent must be >= 0")

    def check_dim(self, dim):
        if self.lam <= -dim:
            raise ValueError("origin exponent must exceed -N for local integrability")

    def __call__(self, domain, y):
        y = np.atleast_2d(y)
        w = np.ones(len(y))
        if self.lam != 0:
            w = w * np.linalg.norm(y, axis=1) ** self.lam
        if self.alpha != 0:
            w = w * np.maximum(domain.signed_distance(y), 0.0) ** self.alpha
        return w


@dataclass(frozen=True)
class BallSpec:
    """Ball of the intrinsic geometry, euclidean or boundary-adapted."""

    center: np.ndarray
    radius: float
    gamma: float
    kind: str
    d_center: float
    foot: np.ndarray | None = None
    normal: np.ndarray | None = None
    frame: np.ndarray | None = None
    domain: Domain | None = None

    def chart_coordinates(self, y):
        """Tangential coordinates and boundary offset of points ``y``."""
        y = np.atleast_2d(np.asarray(y, float))
        rel = y - self.foot[None, :]
        yt = rel @ self.frame
        s = rel @ self.normal
        a = self.domain.chart_height(self.foot, self.normal, self.frame, yt)
        return yt, a - s

    def contains(self, y):
        y = np.atleast_2d(np.asarray(y, float))
        if self.kind == "euclidean":
            return np.linalg.norm(y - self.center[None, :], axis=1) < self.radius
        yt, offset = self.chart_coordinates(y)
        tang = np.linalg.norm(yt, axis=1) <= self.radius if yt.shape[1] else np.ones(len(y), bool)
        ok = np.isfinite(offset)
        off = np.where(ok, offset, -np.inf)
        return tang & ok & (off > self.d_center - self.radius) & (off < self.d_center + self.radius)

    def bounding_box(self):
        if self.kind == "euclidean":
            return self.center - self.radius, self.center + self.radius
        # convex domains: the chart region lies in the cylinder |y'| <= r,
        # 0 <= -s <= d + r + |a|, with the boundary height |a| bounded by 2r
        depth = self.d_center + 3 * self.radius
        n = self.normal
        mid = self.foot - 0.5 * depth * n
        half = self.radius * np.sqrt(np.clip(1 - n**2, 0, None)) + 0.5 * depth * np.abs(n)
        return mid - half, mid + half


def make_ball(domain, x, r, gamma=1.5, allow_boundary=False):
    """Ball of the two-regime geometry: euclidean iff ``d(x) >= gamma r``.

    Parameters
    ----------
    domain : Domain
    x : array_like
        Centre; must lie in the domain (or on its boundary when
        ``allow_boundary`` is set).
    r : float
        Radius, ``0 < r < domain.chart_scale``.
    gamma : float
        Dichotomy constant in ``(1, 2)``.
    """
    x = np.asarray(x, float).reshape(-1)
    if not 1.0 < gamma < 2.0:
        raise ValueError("gamma must lie in (1, 2)")
    if not 0 < r < domain.chart_scale:
        raise RadiusError(f"radius {r} not in (0, {domain.chart_scale})")
    sd = float(domain.signed_distance(x))
    if sd < -1e-12 or (sd <= 0 and not allow_boundary):
        raise DomainError("ball centre outside the domain")
    d = max(sd, 0.0)
    if d >= gamma * r:
        return BallSpec(center=x, radius=float(r), gamma=gamma, kind="euclidean", d_center=d, domain=domain)
    if d > 0:
        foot = np.asarray(domain.nearest_point(x), float)
    else:
        foot = x.copy()
    normal = domain.outward_normal(foot)[0]
    frame = null_space(normal[None, :]) if domain.dim > 1 else np.zeros((1, 0))
    return BallSpec(
        center=x,
        radius=float(r),
        gamma=gamma,
        kind="boundary-adapted",
        d_center=d,
        foot=foot,
        normal=normal,
        frame=frame,
        domain=domain,
    )


# ---------------------------------------------------------------------------
# weighted volumes


def _adaptive_midpoint(f, lo, hi, rtol=2e-3, base=8, min_level=2, max_level=9, max_cells=400_000, support=None):
    """Tensor midpoint rule with local parent/children subdivision.

    ``support(u)`` flags points inside the integration region (default
    ``f != 0``); cells whose centre, children and corners disagree are cut
    by the region boundary and always refined.  Returns the integral and
    the number of function evaluations.
    """
    if support is None:
        support = lambda u: f(u) != 0
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    dim = len(lo)
    width = (hi - lo) / base
    axes = [lo[j] + (np.arange(base) + 0.5) * width[j] for j in range(dim)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    vol_root = float(np.prod(hi - lo))
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * dim, indexing="ij")).reshape(dim, -1).T
    total = 0.0
    evals = 0
    for level in range(max_level + 1):
        vol = float(np.prod(width))
        kids = centers[:, None, :] + 0.25 * signs[None, :, :] * width[None, None, :]
        corners = centers[:, None, :] + 0.5 * signs[None, :, :] * width[None, None, :]
        fp = f(centers)
        fk = f(kids.reshape(-1, dim)).reshape(len(centers), -1)
        pts = np.concatenate([centers[:, None, :], kids, corners], axis=1)
        nz = support(pts.reshape(-1, dim)).reshape(len(centers), -1)
        evals += fp.size + fk.size + nz.size
        parent = fp * vol
        child = fk.sum(axis=1) * vol / len(signs)
        estimate = abs(total + child.sum())
        tol_cell = rtol * max(estimate, 1e-300) * vol / vol_root
        # a cell cut by the support boundary is never accepted
        cut = nz.any(axis=1) & ~nz.all(axis=1)
        accept = (np.abs(child - parent) <= tol_cell) & ~cut
        if level < min_level:
            accept[:] = False
        last = level == max_level or (~accept).sum() * len(signs) > max_cells
        if last:
            total += child.sum()
            break
        total += child[accept].sum()
        centers = kids[~accept].reshape(-1, dim)
        width = width / 2
        if len(centers) == 0:
            break
    return float(total), evals


def _ball_coordinates(dim, r):
    """Box parametrisation of the centred ball ``|z| < r`` in ``R^dim``.

    Returns ``(lo, hi, to_point)`` where ``to_point(u)`` gives the points,
    the Jacobian and a membership mask; polar coordinates for ``dim`` 2
    and 3 remove the discontinuity at the sphere, higher dimensions use the
    mask.
    """
    if dim == 0:
        return np.zeros(0), np.zeros(0), lambda u: (np.zeros((len(u), 0)), np.ones(len(u)), np.ones(len(u), bool))
    if dim == 1:
        return np.array([-r]), np.array([r]), lambda u: (u.copy(), np.ones(len(u)), np.ones(len(u), bool))
    if dim == 2:
        def polar(u):
            rho, th = u[:, 0], u[:, 1]
            return np.c_[rho * np.cos(th), rho * np.sin(th)], rho, np.ones(len(u), bool)

        return np.array([0.0, 0.0]), np.array([r, 2 * math.pi]), polar
    if dim == 3:
        def spherical(u):
            rho, ph, th = u[:, 0], u[:, 1], u[:, 2]
            s = np.sin(ph)
            z = rho[:, None] * np.c_[s * np.cos(th), s * np.sin(th), np.cos(ph)]
            return z, rho * rho * s, np.ones(len(u), bool)

        return np.array([0.0, 0.0, 0.0]), np.array([r, math.pi, 2 * math.pi]), spherical

    def cube(u):
        inside = np.linalg.norm(u, axis=1) < r
        return u.copy(), inside.astype(float), inside

    return -r * np.ones(dim), r * np.ones(dim), cube


def weighted_volume(domain, w, ball, rtol=2e-3, max_level=None):
    """``V(x, r) = int_{B cap Omega} |y|^lam d(y)^alpha dy`` by adaptive quadrature.

    Euclidean balls are integrated in polar coordinates about the centre.
    Boundary-adapted balls use the chart map
    ``(y', t) -> foot + frame y' + (a(y') - t) n``, which has unit Jacobian
    and turns the ball into a disk times the offset interval.
    """
    w.check_dim(domain.dim)
    dim = domain.dim
    r = ball.radius

    tol = 1e-9 * r

    def weight(y):
        sd = domain.signed_distance(y)
        inside = np.isfinite(sd) & (sd > 0)
        val = np.zeros(len(y))
        if np.any(inside):
            yy = y[inside]
            v = np.ones(len(yy))
            if w.lam != 0:
                ny = np.linalg.norm(yy, axis=1)
                v *= np.where(ny > 0, ny, np.inf) ** w.lam
            if w.alpha != 0:
                v *= sd[inside] ** w.alpha
            val[inside] = v
        return val

    if ball.kind == "euclidean":
        lo, hi, to_point = _ball_coordinates(dim, r)

        def f(u):
            z, jac, _ = to_point(u)
            return weight(ball.center[None, :] + z) * jac

        def support(u):
            z, _, mask = to_point(u)
            return mask & (domain.signed_distance(ball.center[None, :] + z) > -tol)

    else:
        tlo, thi, to_tang = _ball_coordinates(dim - 1, r)
        lo = np.append(tlo, max(0.0, ball.d_center - r))
        hi = np.append(thi, ball.d_center + r)

        def chart_point(u):
            yt, jac, mask = to_tang(u[:, :-1])
            a = domain.chart_height(ball.foot, ball.normal, ball.frame, yt)
            ok = mask & np.isfinite(a)
            y = ball.foot[None, :] + yt @ ball.frame.T + (np.where(ok, a, 0.0) - u[:, -1])[:, None] * ball.normal
            return y, jac, ok

        def f(u):
            y, jac, ok = chart_point(u)
            return np.where(ok, weight(y) * jac, 0.0)

        def support(u):
            y, _, ok = chart_point(u)
            return ok & (domain.signed_distance(y) > -tol)

    if max_level is None:
        max_level = 10 if dim <= 2 else 7
    return _adaptive_midpoint(f, lo, hi, rtol=rtol, max_level=max_level, support=support)[0]


def radial_integral_exact(dim, lam, r):
    """``int_{B(0,r)} |y|^lam dy = |S^{N-1}| r^{lam+N} / (lam + N)``."""
    if lam <= -dim:
        raise ValueError("integral diverges for lam <= -N")
    return sphere_area(dim) / (lam + dim) * r ** (lam + dim)


def euclidean_radial_integral(x, r, lam, rtol=2e-3):
    """``int_{B(x,r)} |y|^lam dy`` over the whole space, in polar coordinates about ``x``."""
    x = np.asarray(x, float)
    dim = len(x)
    lo, hi, to_point = _ball_coordinates(dim, r)

    def f(u):
        z, jac, mask = to_point(u)
        ny = np.linalg.norm(x[None, :] + z, axis=1)
        return np.where(mask & (ny > 0), np.where(ny > 0, ny, 1.0) ** lam * jac, 0.0)

    def support(u):
        return to_point(u)[2]

    return _adaptive_midpoint(f, lo, hi, rtol=rtol, max_level=10 if dim <= 2 else 7, support=support)[0]


def volume_shape(domain, w, x, r):
    """``max{d^alpha(x)(|x|+r)^lam, r^alpha} r^N``."""
    x = np.asarray(x, float)
    d = float(max(domain.signed_distance(x), 0.0))
    nx = float(np.linalg.norm(x))
    return max(d**w.alpha * (nx + r) ** w.lam, r**w.alpha) * r**domain.dim


@dataclass(frozen=True)
class VolumeFit:
    c1: float
    c2: float
    feasible: bool
    rows: list

    @property
    def ratio(self):
        return self.c2 / self.c1


_VOLUME_MEMO = {}


def _ball_volume(domain, w, x, r, gamma, rtol):
    """Memoised ``weighted_volume`` for fits that revisit the same balls."""
    key = (repr(domain), w.lam, w.alpha, tuple(np.asarray(x, float)), float(r), gamma, rtol)
    if key not in _VOLUME_MEMO:
        if len(_VOLUME_MEMO) > 4096:
            _VOLUME_MEMO.clear()
        _VOLUME_MEMO[key] = weighted_volume(domain, w, make_ball(domain, x, r, gamma), rtol=rtol)
    return _VOLUME_MEMO[key]


def volume_envelope_fit(domain, w, samples, gamma=1.5, rtol=2e-3):
    """Two-sided constants for ``V(x,r)`` against the volume shape."""
    if len(samples) == 0:
        raise ValueError("empty sample set")
    rows = []
    for x, r in samples:
        V = _ball_volume(domain, w, x, r, gamma, rtol)
        s = volume_shape(domain, w, x, r)
        rows.append((tuple(np.asarray(x, float)), float(r), V, s, V / s))
    ratios = np.array([row[4] for row in rows])
    return VolumeFit(c1=float(ratios.min()), c2=float(ratios.max()), feasible=True, rows=rows)


def radial_volume_fit(dim, lam, samples, rtol=2e-3):
    """Constants ``d1, d2`` with ``d1 r^N (|x|+r)^lam <= int_{B(x,r)} |y|^lam <= d2 ...``."""
    if len(samples) == 0:
        raise ValueError("empty sample set")
    ratios = []
    for x, r in samples:
        x = np.asarray(x, float)
        val = euclidean_radial_integral(x, r, lam, rtol=rtol)
        ratios.append(val / (r**dim * (np.linalg.norm(x) + r) ** lam))
    ratios = np.asarray(ratios)
    return float(ratios.min()), float(ratios.max())


@dataclass(frozen=True)
class DoublingResult:
    constant: float
    argmax: tuple
    rows: list


def doubling_constant(domain, w, samples, gamma=1.5, rtol=2e-3):
    """``C_D = max V(x, 2r) / V(x, r)`` over the samples."""
    if len(samples) == 0:
        raise ValueError("empty sample set")
    rows = []
    for x, r in samples:
        if 2 * r >= domain.chart_scale:
            raise RadiusError("doubling needs 2r below the chart scale")
        v1 = _ball_volume(domain, w, x, r, gamma, rtol)
        v2 = _ball_volume(domain, w, x, 2 * r, gamma, rtol)
        rows.append((tuple(np.asarray(x, float)), float(r), v1, v2, v2 / v1))
    k = int(np.argmax([row[4] for row in rows]))
    return DoublingResult(constant=rows[k][4], argmax=(rows[k][0], rows[k][1]), rows=rows)


def _halton(dim, n, seed):
    return qmc.Halton(d=dim, scramble=True, seed=seed).random(n)


def _interior_points(domain, n, seed, min_d=0.0):
    lo, hi = domain.bounding_box()
    out = []
    m = 4 * n
    while sum(len(o) for o in out) < n:
        pts = lo + _halton(domain.dim, m, seed) * (hi - lo)
        keep = domain.signed_distance(pts) > min_d
        out.append(pts[keep])
        seed += 1
    return np.concatenate(out)[:n]


def sample_balls(domain, n, seed=0, r_range=(0.05, 0.45), boundary_fraction=0.5, gamma=1.5):
    """Deterministic ``(x, r)`` samples with radii ``r_range`` times the chart scale.

    A ``boundary_fraction`` of the centres is moved to distance below
    ``gamma r`` so that the boundary-adapted branch is exercised.
    """
    beta = domain.chart_scale
    pts = _interior_points(domain, n, seed, min_d=1e-3 * beta)
    u = _halton(2, n, seed + 101)
    radii = beta * (r_range[0] + (r_range[1] - r_range[0]) * u[:, 0])
    n_b = int(round(boundary_fraction * n))
    out = []
    for i in range(n):
        x = pts[i]
        r = radii[i]
        if i < n_b and not domain.ridge(x[None, :], tol=1e-9)[0]:
            foot = np.asarray(domain.nearest_point(x))
            inward = x - foot
            nrm = np.linalg.norm(inward)
            if nrm > 0:
                x = foot + inward / nrm * (0.05 + 0.9 * u[i, 1]) * gamma * r
        out.append((x, float(r)))
    return out


# ---------------------------------------------------------------------------
# condition -div(|x|^{2-N} grad d) >= 0


@dataclass(frozen=True)
class CondResult:
    holds: bool
    min_value: float
    values: np.ndarray
    points: np.ndarray
    skipped: int
    method: str


def _cond_closed(domain, p):
    grad, lap = domain.grad_lap(p)
    r = np.linalg.norm(p, axis=1)
    N = domain.dim
    xg = np.einsum("ij,ij->i", p, grad)
    return -((2 - N) * r ** (-N) * xg + r ** (2 - N) * lap)


def _cond_fd(domain, p, step=1e-5):
    N = domain.dim

    def field(q):
        g, _ = domain.grad_lap(q)
        return np.linalg.norm(q, axis=1)[:, None] ** (2 - N) * g

    div = np.zeros(len(p))
    for j in range(N):
        e = np.zeros(N)
        e[j] = step
        div += (field(p + e)[:, j] - field(p - e)[:, j]) / (2 * step)
    return -div


def check_condition_cond(domain, n_samples=50, seed=0, method="auto", tol=1e-8):
    """Evaluate ``-div(|x|^{2-N} grad d)`` at interior samples.

    Samples on the ridge, within ``0.05`` inradius of the origin or of the
    boundary are skipped; the number skipped is reported.
    """
    if domain.dim < 3:
        raise ValueError("condition is stated for N >= 3")
    if not domain.contains_origin:
        raise DomainError("origin must lie in the domain")
    rin = domain.inradius
    pts = []
    skipped = 0
    s = seed
    while len(pts) < n_samples:
        cand = _interior_points(domain, n_samples, s)
        s += 1
        for q in cand:
            bad = (
                domain.ridge(q[None, :], tol=1e-6)[0]
                or np.linalg.norm(q) < 0.05 * rin
                or domain.signed_distance(q) < 0.05 * rin
            )
            if bad:
                skipped += 1
                continue
            pts.append(q)
            if len(pts) == n_samples:
                break
    pts = np.asarray(pts)
    if method == "auto":
        method = "fd" if isinstance(domain, ConvexPolygon) else "closed"
    vals = _cond_closed(domain, pts) if method == "closed" else _cond_fd(domain, pts)
    return CondResult(
        holds=bool(np.all(vals >= -tol)),
        min_value=float(vals.min()),
        values=vals,
        points=pts,
        skipped=skipped,
        method=method,
    )
