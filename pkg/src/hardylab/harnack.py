"""Boundary-adapted parabolic Harnack quotients and the weakly degenerate counterexample."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from .discretize import build_grid
from .geometry import Ball, make_ball
from .heat import DtPolicy, ThetaStepper

__all__ = [
    "ModeError",
    "GeometryError",
    "Cylinder",
    "Field",
    "HarnackReport",
    "make_cylinder",
    "random_positive_data",
    "generate_positive_solution",
    "harnack_quotient",
    "harnack_positions",
    "harnack_sweep",
    "counterexample_profile",
    "counterexample_residual",
    "CounterexampleReport",
    "weak_degenerate_counterexample",
]

WINDOW_SAMPLES = 8


class ModeError(ValueError):
    """Certification requested for a weight exponent below one."""


class GeometryError(ValueError):
    """The cylinder base contains no grid node."""


@dataclass(eq=False)
class Cylinder:
    """``B(x, r/2) x`` early window ``(r^2/4, r^2/2)`` and late window ``(3r^2/4, r^2)``."""

    base: object
    r: float
    samples: int = WINDOW_SAMPLES

    @property
    def early(self):
        return np.linspace(self.r**2 / 4, self.r**2 / 2, self.samples)

    @property
    def late(self):
        return np.linspace(3 * self.r**2 / 4, self.r**2, self.samples)


def make_cylinder(domain, x, r, gamma=1.5, samples=WINDOW_SAMPLES):
    base = make_ball(domain, x, r / 2, gamma, allow_boundary=True)
    return Cylinder(base=base, r=float(r), samples=samples)


@dataclass(eq=False)
class Field:
    """Node field sampled at ``times`` (rows), one column block per node."""

    times: np.ndarray
    values: np.ndarray
    theta: float = 0.5
    seed: int | None = None

    def rows(self, ts):
        idx = [int(np.argmin(np.abs(self.times - t))) for t in ts]
        if np.any(np.abs(self.times[idx] - np.asarray(ts)) > 1e-12 * max(1.0, float(np.max(ts)))):
            raise ValueError("field not sampled at the requested window times")
        return self.values[idx]


def random_positive_data(grid, seed, modes=12, bandwidth=1.5, amplitude=1.0):
    """``exp(f)`` for a smooth random trigonometric field ``f`` with unit variance."""
    rng = np.random.default_rng(seed)
    w = rng.normal(scale=bandwidth, size=(modes, grid.dim))
    ph = rng.uniform(0, 2 * np.pi, size=modes)
    a = rng.normal(size=modes)
    f = np.cos(2 * np.pi * grid.positions @ w.T + ph[None, :]) @ a
    f *= amplitude / math.sqrt(0.5 * np.sum(a * a))
    return np.exp(f)


def generate_positive_solution(op, seed, times, u0=None, policy=None, theta=0.5):
    """Evolve positive random data on the whole domain and sample at ``times``.

    Several seeds may be passed at once; they are evolved together.
    Undershoot to non-positive values triggers a rerun with ``theta = 1``.
    """
    times = np.unique(np.asarray(times, float))
    seeds = list(np.atleast_1d(seed))
    if u0 is None:
        U0 = np.stack([random_positive_data(op.grid, int(s)) for s in seeds], axis=1)
    else:
        U0 = np.asarray(u0, float).reshape(op.n, -1)
    policy = policy or DtPolicy(dt0=times[0] / 64, rho=1.2, dt_max=times[-1] / 64, startup=0)
    vals = ThetaStepper(op, theta).run(U0, times, policy)
    used = theta
    if vals.min() <= 0 and theta < 1:
        used = 1.0
        vals = ThetaStepper(op, 1.0).run(U0, times, policy)
    if vals.min() <= 0:
        raise RuntimeError("positive solution lost positivity")
    fields = [Field(times, vals[:, :, j], used, int(s) if u0 is None else None) for j, s in enumerate(seeds)]
    return fields if np.ndim(seed) else fields[0]


def _base_nodes(grid, cyl):
    inside = cyl.base.contains(grid.positions)
    nodes = np.flatnonzero(inside)
    if len(nodes) == 0:
        raise GeometryError("cylinder base contains no grid node")
    return nodes


def harnack_quotient(field, cylinder, grid, divide=None):
    """``sup`` over base x early window divided by ``inf`` over base x late window.

    ``divide`` is an optional node vector the field is divided by first.
    """
    nodes = _base_nodes(grid, cylinder)
    early = field.rows(cylinder.early)[:, nodes]
    late = field.rows(cylinder.late)[:, nodes]
    if divide is not None:
        early = early / divide[nodes][None, :]
        late = late / divide[nodes][None, :]
    lo = late.min()
    if lo <= 0:
        raise ValueError("field is not positive on the late window")
    return float(early.max() / lo)


def harnack_positions(domain, n, n_boundary, seed=0, min_interior=None):
    """``n`` deterministic centres, the first ``n_boundary`` on the boundary.

    Boundary centres are nearest-point projections of a scrambled Halton
    sequence; interior centres are Halton points with ``d >= min_interior``.
    """
    lo, hi = domain.bounding_box()
    beta = domain.chart_scale
    min_interior = 2 * beta if min_interior is None else min_interior
    out = []
    s = seed
    while len(out) < n_boundary:
        pts = lo + qmc.Halton(d=domain.dim, scramble=True, seed=s).random(4 * n_boundary) * (hi - lo)
        s += 1
        for p in pts:
            if len(out) == n_boundary:
                break
            if domain.signed_distance(p) <= 0 or domain.ridge(p[None, :], tol=1e-6)[0]:
                continue
            out.append(np.asarray(domain.nearest_point(p), float))
    s = seed + 1000
    while len(out) < n:
        pts = lo + qmc.Halton(d=domain.dim, scramble=True, seed=s).random(4 * n) * (hi - lo)
        s += 1
        for p in pts:
            if len(out) == n:
                break
            if domain.signed_distance(p) >= min_interior:
                out.append(p)
    return np.asarray(out)


@dataclass(eq=False)
class HarnackReport:
    cells: list
    max_quotient: float
    fingerprint: str
    mode: str
    params: dict = field(default_factory=dict)

    def rows(self):
        return [(tuple(c["x"]), c["r"], c["seed"], c["Q"]) for c in self.cells]


def harnack_sweep(op, positions, radii, seeds, mode="certify", alpha=None, gamma=1.5, policy=None):
    """Harnack quotients over ``positions x radii x seeds``.

    Parameters
    ----------
    op : WeightedOperator
        ``L`` family (``mode="certify"``), a ground-state form, or a
        Schrodinger operator (``mode="schrodinger"``) whose solutions are
        divided by ``d^{alpha/2}`` before the quotients are taken.
    alpha : float
        Boundary exponent; read from the operator for the ``L`` family.
    """
    grid = op.grid
    domain = grid.domain
    if alpha is None:
        alpha = float(op.params.get("alpha", 1.0)) if op.family == "L" else 1.0
    if mode == "certify" and alpha < 1:
        raise ModeError("certification needs alpha >= 1; use the counterexample for alpha < 1")
    if mode not in ("certify", "schrodinger", "classical"):
        raise ValueError(f"unknown mode {mode!r}")
    divide = grid.distance ** (alpha / 2) if mode == "schrodinger" else None
    cyls = []
    for x in positions:
        for r in radii:
            cyls.append((np.asarray(x, float), float(r), make_cylinder(domain, x, r, gamma)))
    times = np.unique(np.concatenate([np.concatenate([c.early, c.late]) for _, _, c in cyls]))
    fields = generate_positive_solution(op, list(seeds), times, policy=policy)
    cells = []
    for f in fields:
        for x, r, c in cyls:
            cells.append({"x": x.tolist(), "r": r, "seed": f.seed, "Q": harnack_quotient(f, c, grid, divide)})
    key = json.dumps(
        {"op": op.fingerprint(), "pos": np.round(np.asarray(positions), 12).tolist(), "radii": list(radii),
         "seeds": [int(s) for s in seeds], "mode": mode, "gamma": gamma},
        sort_keys=True,
    )
    return HarnackReport(
        cells=cells,
        max_quotient=max(c["Q"] for c in cells),
        fingerprint=hashlib.sha256(key.encode()).hexdigest()[:16],
        mode=mode,
        params={"alpha": alpha, "h": grid.h, "gamma": gamma},
    )


# ---------------------------------------------------------------------------
# weakly degenerate counterexample


def counterexample_profile(rho, alpha, N):
    """``v(rho) = int_rho^1 ds / ((1-s)^alpha s^{N-1})`` for ``0 < alpha < 1``.

    The substitution ``u = (1-s)^{1-alpha}`` removes the endpoint
    singularity: ``v = (1-alpha)^{-1} int_0^{(1-rho)^{1-alpha}} (1 - u^{1/(1-alpha)})^{1-N} du``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    p = 1.0 / (1.0 - alpha)
    rho = np.atleast_1d(np.asarray(rho, float))
    out = np.empty_like(rho)
    for i, r in enumerate(rho):
        if r >= 1:
            out[i] = 0.0
            continue
        top = (1.0 - r) ** (1.0 - alpha)
        val, err = integrate.quad(lambda u: (1.0 - u**p) ** (1 - N), 0.0, top, epsabs=1e-14, epsrel=1e-12)
        out[i] = p * val
    return out


def counterexample_residual(alpha, N, h):
    """Relative residual of ``div(d^alpha grad v)`` on the annulus ``1/2 < |y| < 1``.

    The flux-form five-point divergence is evaluated at lattice nodes whose
    full stencil lies in the annulus; the discrete ``l^2`` norm of the
    residual is divided by the ``l^2`` norm of ``|d^alpha grad v| / h``.
    """
    ball = Ball(1.0, N)
    grid = build_grid(ball, h, region=lambda X: np.linalg.norm(X, axis=1) > 0.5)
    pos = grid.positions
    rad = np.linalg.norm(pos, axis=1)
    # profile values on all stencil points through a fine radial table
    table_r = np.linspace(0.5 - 2 * h, 1.0, 4001)
    table_v = counterexample_profile(table_r, alpha, N)

    def v_at(q):
        return np.interp(np.linalg.norm(q, axis=1), table_r, table_v)

    def w_at(q):
        return np.maximum(1.0 - np.linalg.norm(q, axis=1), 0.0) ** alpha

    res = np.zeros(len(pos))
    ok = np.ones(len(pos), bool)
    v0 = v_at(pos)
    for ax in range(N):
        for sgn in (1, -1):
            e = np.zeros(N)
            e[ax] = sgn * h
            q = pos + e
            rq = np.linalg.norm(q, axis=1)
            ok &= (rq > 0.5) & (rq < 1.0)
            res += w_at(pos + 0.5 * e) * (v_at(q) - v0)
    res /= h**2
    flux = 1.0 / rad ** (N - 1)  # |d^alpha v'| is exactly s^{1-N}
    sel = ok
    num = math.sqrt(np.sum(res[sel] ** 2) * h**N)
    den = math.sqrt(np.sum((flux[sel] / h) ** 2) * h**N)
    return num / den


@dataclass(eq=False)
class CounterexampleReport:
    alpha: float
    N: int
    radii: np.ndarray
    quotients: np.ndarray
    growth: float
    sample_spacing: float
    refinement: dict
    residuals: dict
    v_at_one: float


def _elliptic_quotient(alpha, N, r, spacing, gamma=1.5):
    """sup/inf of ``v`` over ``B(x0, r/2) cap Omega`` sampled on a lattice, ``x0`` on the sphere."""
    ball = Ball(1.0, N)
    x0 = np.zeros(N)
    x0[0] = 1.0
    base = make_ball(ball, x0, r / 2, gamma, allow_boundary=True)
    lo, hi = base.bounding_box()
    axes = [np.arange(np.floor(lo[j] / spacing), np.ceil(hi[j] / spacing) + 1) * spacing + 0.5 * spacing
            for j in range(N)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, N)
    pts = pts[(ball.signed_distance(pts) > 0) & base.contains(pts)]
    if len(pts) == 0:
        raise GeometryError("no lattice point in the boundary ball")
    rad = np.linalg.norm(pts, axis=1)
    vmax = counterexample_profile(rad.min(), alpha, N)[0]
    vmin = counterexample_profile(rad.max(), alpha, N)[0]
    return vmax / vmin


def weak_degenerate_counterexample(alpha=0.5, N=2, radii=(0.2, 0.1, 0.05, 0.025), spacing=None,
                                   residual_h=(1 / 32, 1 / 64), refine=(1 / 100, 1 / 200, 1 / 400)):
    """Boundary-centred elliptic Harnack quotients of the explicit solution ``v``.

    ``growth`` is the quotient at the smallest radius divided by the
    quotient at the largest, all sampled with one lattice spacing.
    ``refinement`` holds the quotient at the largest radius for a sequence
    of shrinking sample spacings.
    """
    if not 0 < alpha < 1:
        raise ValueError("the counterexample needs 0 < alpha < 1")
    radii = np.asarray(radii, float)
    spacing = spacing or float(radii.min()) / 16
    Q = np.array([_elliptic_quotient(alpha, N, r, spacing) for r in radii])
    refinement = {float(s): _elliptic_quotient(alpha, N, float(radii.max()), s) for s in refine}
    residuals = {float(h): counterexample_residual(alpha, N, h) for h in residual_h}
    return CounterexampleReport(
        alpha=alpha,
        N=N,
        radii=radii,
        quotients=Q,
        growth=float(Q[np.argmin(radii)] / Q[np.argmax(radii)]),
        sample_spacing=spacing,
        refinement=refinement,
        residuals=residuals,
        v_at_one=float(counterexample_profile(1.0, alpha, N)[0]),
    )
