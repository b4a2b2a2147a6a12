"""Envelope shapes of the two-sided kernel and Green estimates, and constant fits.

A shape ``S(x, y, t)`` excludes the Gaussian factor.  Fitting finds
constants with

    C1 S exp(-g1 |x-y|^2 / t) <= k <= C2 S exp(-g2 |x-y|^2 / t),   g2 <= g1,

over a finite grid of Gaussian rates.  ``|xy|`` is read as ``|x| |y|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "FAMILIES",
    "DEFAULT_RATES",
    "Envelope",
    "shape",
    "FitResult",
    "fit_constants",
    "kernel_samples",
    "green_samples",
    "green_envelope_check",
    "CrossoverResult",
    "regime_crossover",
    "branch_transition",
    "kc_exponent",
    "hc_exponent",
]

FAMILIES = (
    "free",
    "origin-small",
    "origin-large",
    "bry-small",
    "bry-large",
    "degenerate-L",
    "degenerate-L-lam",
    "general-E-small",
    "general-E-large",
    "green",
    "kc-small",
    "kc-large",
    "hc-small",
    "hc-large",
    "dirichlet-small",
    "dirichlet-large",
)
LARGE = ("origin-large", "bry-large", "general-E-large", "kc-large", "hc-large", "dirichlet-large")
DEFAULT_RATES = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1 / 2)


def kc_exponent(c, N):
    """``lam = 2 - N + sqrt((N-2)^2 - 4c)`` for the potential ``c |x|^{-2}``."""
    disc = (N - 2) ** 2 - 4 * c
    if disc < 0:
        raise ValueError("c exceeds (N-2)^2/4")
    return 2 - N + math.sqrt(disc)


def hc_exponent(c):
    """``alpha = 1 + sqrt(1 - 4c)`` for the potential ``c d^{-2}``."""
    if not 0 <= c <= 0.25:
        raise ValueError("c must lie in [0, 1/4]")
    return 1 + math.sqrt(1 - 4 * c)


@dataclass(frozen=True)
class Envelope:
    """Two-sided bound family with fitted constants.

    ``alpha`` and ``lam`` are derived from ``c`` for the ``kc-*``/``hc-*``
    families on every access.
    """

    family: str
    N: int
    alpha_param: float = 1.0
    lam_param: float = 0.0
    c: float | None = None
    lam1: float | None = None
    C1: float | None = None
    C2: float | None = None
    g1: float | None = None
    g2: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown envelope family {self.family!r}")
        if self.family.startswith(("kc-", "hc-")) and self.c is None:
            raise ValueError("kc/hc families need the constant c")

    @property
    def alpha(self):
        if self.family.startswith("hc-"):
            return hc_exponent(self.c)
        return float(self.alpha_param)

    @property
    def lam(self):
        if self.family.startswith("kc-"):
            return kc_exponent(self.c, self.N)
        if self.family.startswith("origin-"):
            return 2.0 - self.N
        return float(self.lam_param)

    @property
    def gaussian(self):
        return self.family not in LARGE and self.family != "green"

    def as_dict(self):
        return {
            "family": self.family,
            "N": self.N,
            "alpha": self.alpha,
            "lam": self.lam,
            "c": self.c,
            "lam1": self.lam1,
            "C1": self.C1,
            "C2": self.C2,
            "g1": self.g1,
            "g2": self.g2,
        }


def shape(env, x, y, t, dx, dy):
    """Envelope shape ``S(x, y, t)`` without the Gaussian factor.

    Parameters
    ----------
    env : Envelope
    x, y : array_like, shape (n, N)
    t : array_like, shape (n,)
        Ignored for the Green family.
    dx, dy : array_like
        Boundary distances of ``x`` and ``y``.
    """
    x = np.atleast_2d(np.asarray(x, float))
    y = np.atleast_2d(np.asarray(y, float))
    t = np.asarray(t, float)
    dx = np.asarray(dx, float)
    dy = np.asarray(dy, float)
    N = env.N
    fam = env.family
    nx = np.linalg.norm(x, axis=1)
    ny = np.linalg.norm(y, axis=1)
    dd = dx * dy
    if fam in LARGE:
        if env.lam1 is None:
            raise ValueError("large-time envelope needs lam1")
        decay = np.exp(-env.lam1 * t)
    if fam == "free":
        return t ** (-N / 2)
    if fam in ("origin-small", "kc-small"):
        lam = env.lam
        a = ((nx + np.sqrt(t)) * (ny + np.sqrt(t))) ** (abs(lam) / 2)
        return np.minimum(a, dd / t) * (nx * ny) ** (lam / 2) * t ** (-N / 2)
    if fam in ("origin-large", "kc-large"):
        return dd * (nx * ny) ** (env.lam / 2) * decay
    if fam == "bry-small":
        return np.minimum(1.0, np.sqrt(dd / t)) * t ** (-N / 2)
    if fam == "bry-large":
        return np.sqrt(dd) * decay
    if fam == "degenerate-L":
        a = env.alpha
        return np.minimum(t ** (-a / 2), dd ** (-a / 2)) * t ** (-N / 2)
    if fam == "degenerate-L-lam":
        a = env.alpha
        lam = env.lam
        b = ((nx + np.sqrt(t)) * (ny + np.sqrt(t))) ** (abs(lam) / 2) / dd ** (a / 2)
        return np.minimum(t ** (-a / 2), b) * t ** (-N / 2)
    if fam in ("general-E-small", "hc-small"):
        a = env.alpha
        return np.minimum(1.0, (dd / t) ** (a / 2)) * t ** (-N / 2)
    if fam in ("general-E-large", "hc-large"):
        return dd ** (env.alpha / 2) * decay
    if fam == "dirichlet-small":
        return np.minimum(1.0, dd / t) * t ** (-N / 2)
    if fam == "dirichlet-large":
        return dd * decay
    if fam == "green":
        a = env.alpha
        r = np.linalg.norm(x - y, axis=1)
        return np.minimum(r ** (2 - N), dd ** (a / 2) * r ** (2 - N - a))
    raise ValueError(fam)


@dataclass(eq=False)
class FitResult:
    envelope: Envelope
    feasible: bool
    ratio: float
    worst_lower: int
    worst_upper: int
    table: list = field(default_factory=list)

    def as_dict(self):
        out = self.envelope.as_dict()
        out.update(
            feasible=self.feasible, ratio=self.ratio, worst_lower=self.worst_lower, worst_upper=self.worst_upper
        )
        return out


def fit_constants(x, y, t, k, envelope, dx, dy, rates=DEFAULT_RATES, floor=None):
    """Fit ``(C1, g1, C2, g2)`` minimizing ``C2/C1`` with ``g2 <= g1``.

    Ties in the ratio go to the larger ``g2``.  Families without a
    Gaussian factor use the single rate ``0``.
    """
    k = np.asarray(k, float)
    if k.size == 0:
        raise ValueError("empty sample set")
    if np.any(~np.isfinite(k)) or np.any(k <= 0):
        raise ValueError("kernel samples must be positive")
    t = np.broadcast_to(np.asarray(t, float), k.shape)
    if floor is not None and np.any(t < floor * (1 - 1e-12)):
        raise ValueError("samples below the resolution floor")
    S = shape(envelope, x, y, t, dx, dy)
    base = k / S
    if envelope.gaussian:
        r2t = np.sum((np.atleast_2d(x) - np.atleast_2d(y)) ** 2, axis=1) / t
        rates = tuple(sorted(rates))
    else:
        r2t = np.zeros_like(k)
        rates = (0.0,)
    logb = np.log(base)
    lo = {}
    hi = {}
    for g in rates:
        lr = logb + g * r2t
        lo[g] = (float(np.exp(lr.min())), int(np.argmin(lr)))
        hi[g] = (float(np.exp(lr.max())), int(np.argmax(lr)))
    best = None
    table = []
    for g2 in rates:
        for g1 in rates:
            if g2 > g1:
                continue
            C1, i1 = lo[g1]
            C2, i2 = hi[g2]
            ok = 0 < C1 <= C2
            ratio = C2 / C1 if C1 > 0 else math.inf
            table.append((g1, g2, C1, C2, ratio, ok))
            if not ok:
                continue
            key = (ratio, -g2)
            if best is None or key < best[0]:
                best = (key, g1, g2, C1, C2, i1, i2)
    if best is None:
        env = replace(envelope)
        return FitResult(env, False, math.inf, -1, -1, table)
    _, g1, g2, C1, C2, i1, i2 = best
    env = replace(envelope, C1=C1, C2=C2, g1=g1, g2=g2)
    return FitResult(env, True, C2 / C1, i1, i2, table)


def _guard_mask(grid, guard, origin_guard):
    m = grid.distance >= guard * grid.h
    if origin_guard:
        m &= grid.radius >= guard * grid.h
    return m


def kernel_samples(slices, grid, guard=2.0, origin_guard=False, window=16.0, rel_floor=1e-8):
    """Flatten kernel slices into fit samples.

    Nodes within ``guard h`` of the boundary (and of the origin when
    ``origin_guard``) are dropped, as are pairs with ``|x-y|^2 / t > window``
    and values below ``rel_floor`` times the largest value of their time.

    Returns
    -------
    dict with arrays ``x, y, t, k, dx, dy, xi, yi``
    """
    mask = _guard_mask(grid, guard, origin_guard)
    nodes = np.flatnonzero(mask)
    pos = grid.positions
    d = grid.distance
    parts = []
    for s in slices:
        if not mask[s.source]:
            continue
        ys = pos[s.source]
        r2 = np.sum((pos[nodes] - ys[None, :]) ** 2, axis=1)
        for j, t in enumerate(s.times):
            v = s.values[j, nodes]
            keep = (r2 / t <= window) & (v > rel_floor * s.values[j].max())
            sel = nodes[keep]
            parts.append((sel, np.full(len(sel), s.source), np.full(len(sel), t), v[keep]))
    if not parts:
        raise ValueError("no kernel samples survive the filters")
    xi = np.concatenate([p[0] for p in parts])
    yi = np.concatenate([p[1] for p in parts])
    return {
        "x": pos[xi],
        "y": pos[yi],
        "t": np.concatenate([p[2] for p in parts]),
        "k": np.concatenate([p[3] for p in parts]),
        "dx": d[xi],
        "dy": d[yi],
        "xi": xi,
        "yi": yi,
    }


def green_samples(greens, grid, exclude=3.0, guard=2.0):
    """Samples ``(x, y, G)`` from Green vectors, away from the source and boundary."""
    mask = _guard_mask(grid, guard, False)
    pos = grid.positions
    d = grid.distance
    xs, ys, gs = [], [], []
    for gv in greens:
        far = np.linalg.norm(pos - pos[gv.source][None, :], axis=1) >= exclude * grid.h
        sel = np.flatnonzero(mask & far)
        xs.append(sel)
        ys.append(np.full(len(sel), gv.source))
        gs.append(gv.g[sel])
    xi = np.concatenate(xs)
    yi = np.concatenate(ys)
    return {"x": pos[xi], "y": pos[yi], "k": np.concatenate(gs), "dx": d[xi], "dy": d[yi], "xi": xi, "yi": yi}


def green_envelope_check(greens, envelope, grid, exclude=3.0, guard=2.0):
    """Two-sided Green fit without a Gaussian factor (``N >= 3``)."""
    if envelope.family != "green":
        raise ValueError("green_envelope_check needs the green family")
    if envelope.N < 3:
        raise ValueError("the Green bound is stated for N >= 3")
    s = green_samples(greens, grid, exclude, guard)
    return fit_constants(s["x"], s["y"], np.ones(len(s["k"])), s["k"], envelope, s["dx"], s["dy"])


@dataclass(eq=False)
class CrossoverResult:
    t_star: float | None
    flagged: bool
    times: np.ndarray
    spread: np.ndarray
    deviation: np.ndarray
    decay_slope: float | None
    reason: str = ""


def regime_crossover(slices, spec, nodes=None, tol=0.05, min_decades=2.0):
    """Smallest time after which ``k e^{lam1 t} / (phi(x) phi(y))`` is flat across pairs.

    The spread at each time is ``(max - min) / mean`` of the normalized
    ratio over all ``(x, y)`` with ``x`` in ``nodes`` and ``y`` a slice
    source.  ``deviation`` is ``max |r - 1|``; its log-log slope beyond
    ``t_star`` is reported as ``decay_slope``.
    """
    times = np.asarray(slices[0].times, float)
    phi = spec.phi
    lam1 = spec.lam
    if nodes is None:
        nodes = np.array(sorted({s.source for s in slices}))
    nodes = np.asarray(nodes, int)
    R = []
    for s in slices:
        R.append(s.values[:, nodes] * np.exp(lam1 * times)[:, None] / (phi[nodes][None, :] * phi[s.source]))
    R = np.concatenate(R, axis=1)
    spread = (R.max(axis=1) - R.min(axis=1)) / R.mean(axis=1)
    dev = np.abs(R - 1.0).max(axis=1)
    if len(times) < 2 or math.log10(times[-1] / times[0]) < min_decades:
        return CrossoverResult(None, True, times, spread, dev, None, "time ladder shorter than required")
    ok = spread <= tol
    t_star = None
    for j in range(len(times)):
        if np.all(ok[j:]):
            t_star = float(times[j])
            break
    if t_star is None:
        return CrossoverResult(None, True, times, spread, dev, None, "spread never falls below tolerance")
    sel = (times >= t_star) & (dev > 0)
    slope = None
    if sel.sum() >= 2:
        slope = float(np.polyfit(np.log(times[sel]), np.log(dev[sel]), 1)[0])
    return CrossoverResult(t_star, False, times, spread, dev, slope)


def branch_transition(times, diag, lam1=None, target_slope=-0.5, N=2):
    """Time where ``log(k t^{N/2})`` at ``x = y`` reaches half the tail slope.

    ``diag`` holds ``k(t, y, y)``; with ``lam1`` the large-time factor
    ``exp(-lam1 t)`` is divided out first.  Returns ``None`` when the local
    slope never crosses ``target_slope / 2``.
    """
    times = np.asarray(times, float)
    f = np.asarray(diag, float) * times ** (N / 2)
    if lam1 is not None:
        f = f * np.exp(lam1 * times)
    lt = np.log(times)
    slope = np.diff(np.log(f)) / np.diff(lt)
    mid = 0.5 * (lt[1:] + lt[:-1])
    level = 0.5 * target_slope
    for j in range(len(slope) - 1):
        a, b = slope[j], slope[j + 1]
        if (a - level) * (b - level) <= 0 and a != b:
            w = (level - a) / (b - a)
            return float(np.exp(mid[j] + w * (mid[j + 1] - mid[j])))
    return None
