"""Hardy-type, Sobolev-type, logarithmic and local inequalities on grids.

Quadratic inequalities are certified through generalized Rayleigh
quotients of sparse pencils (true discrete infima).  The nonquadratic
ones are certified by the extreme ratio over a deterministic test family
("sampled" verdicts).  Every integral is a node sum with the cell volume
``h^N``; energies are the assembled forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .discretize import ResolutionError, assemble, build_grid
from .families import TestFunctionFamily
from .geometry import Ball, ConvexPolygon, WeightParams, make_ball
from .harnack import generate_positive_solution, random_positive_data
from .spectral import generalized_min_quotient

__all__ = [
    "InequalityVerdict",
    "X",
    "improved_hardy_constant",
    "plain_hardy_constant",
    "boundary_strip_hardy",
    "strip_hardy_1d",
    "veps_potential",
    "veps_hardy_check",
    "bft_hardy_constant",
    "hardy_moser_check",
    "hardy_sobolev_checks",
    "weighted_l1_check",
    "entropy_forms",
    "log_sobolev_checks",
    "local_poincare_constant",
    "local_moser_check",
    "mean_value_check",
    "node_gradient",
    "DEFAULT_EPS_GRID",
]

DEFAULT_EPS_GRID = tuple(np.geomspace(1e-4, 1e2, 61))


@dataclass(eq=False)
class InequalityVerdict:
    """Outcome of one inequality check.

    ``constant`` is the best constant over the tested set; ``direction`` is
    ``"min"`` when it multiplies the smaller side (larger is better) and
    ``"max"`` when it bounds the larger side.
    """

    id: str
    constant: float
    direction: str
    passed: bool
    target: float | None = None
    label: str = "quotient"
    count: int = 0
    excluded: int = 0
    trend: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "id": self.id,
            "constant": self.constant,
            "direction": self.direction,
            "passed": bool(self.passed),
            "target": self.target,
            "label": self.label,
            "count": self.count,
            "excluded": self.excluded,
            "trend": {repr(k): v for k, v in self.trend.items()},
            "extra": self.extra,
        }


def X(t):
    """``X(t) = 1 / (1 - ln t)`` on ``(0, 1]``."""
    t = np.asarray(t, float)
    return 1.0 / (1.0 - np.log(t))


def _curved(domain):
    return not (hasattr(domain, "lower") or isinstance(domain, ConvexPolygon))


def _singular_grid(domain, h, octant=None, region=None, region_tag=""):
    """Grid for pencils with ``d^{-2}`` weights: clearance ``h/4`` on curved boundaries."""
    if octant is None:
        octant = domain.reflection_symmetric and domain.dim >= 3
    clearance = 0.25 if _curved(domain) else 0.0
    return build_grid(domain, h, clearance=clearance, octant=octant, region=region, region_tag=region_tag)


# ---------------------------------------------------------------------------
# quadratic Hardy family


def improved_hardy_constant(domain, h, octant=None, slack=0.02):
    """``inf (int |grad u|^2 - (N-2)^2/4 int u^2/|x|^2) / int u^2/d^2``.

    The verdict passes when the infimum is at least ``(1 - slack)/4`` for
    domains satisfying ``-div(|x|^{2-N} grad d) >= 0`` (balls), and when it is
    positive otherwise.
    """
    if domain.dim < 3:
        raise ValueError("the improved Hardy inequality needs N >= 3")
    if not domain.contains_origin:
        raise ValueError("origin must lie in the domain")
    grid = _singular_grid(domain, h, octant)
    op = assemble(domain, grid, "K")
    q = generalized_min_quotient(op.A, op.vol / grid.distance**2)
    exact = isinstance(domain, Ball)
    target = 0.25 * (1 - slack) if exact else 0.0
    passed = q.mu >= target if exact else q.mu > 0
    return InequalityVerdict(
        id="improved-hardy",
        constant=q.mu,
        direction="min",
        passed=bool(passed),
        target=target,
        count=grid.n,
        extra={"h": h, "nodes": grid.n, "residual": q.residual, "indefinite_flag": bool(q.mu < 0)},
    )


def plain_hardy_constant(domain, h):
    """``inf int |grad u|^2 / int u^2/(4 d^2)``; the convex-domain value is 1."""
    grid = _singular_grid(domain, h, octant=False)
    op = assemble(domain, grid, "laplacian")
    q = generalized_min_quotient(op.A, op.vol / (4 * grid.distance**2))
    return InequalityVerdict(
        id="convex-hardy",
        constant=q.mu,
        direction="min",
        passed=bool(q.mu >= 0.95),
        target=0.95,
        count=grid.n,
        extra={"h": h, "residual": q.residual},
    )


def boundary_strip_hardy(domain, delta, h, octant=None, inner="free", min_layers=10):
    """``inf int_S |x|^{2-N} |grad f|^2 / int_S |x|^{2-N} f^2/d^2`` over the strip ``S = {d <= delta}``.

    ``f`` vanishes on the outer boundary.  ``inner="free"`` leaves the inner
    surface ``d = delta`` free (the strip is closed there); ``"dirichlet"``
    removes the nodes beyond ``delta - h/2`` and imposes ``f = 0`` across.
    """
    N = domain.dim
    layers = delta / h
    if layers < min_layers * (1 - 1e-9):
        raise ResolutionError(f"strip has {layers:.1f} grid layers, need {min_layers}")
    if inner == "free":
        region = lambda X: domain.signed_distance(X) <= delta  # noqa: E731
    elif inner == "dirichlet":
        region = None
    else:
        raise ValueError("inner must be 'free' or 'dirichlet'")
    lam = 2.0 - N
    if inner == "free":
        grid = _singular_grid(domain, h, octant, region=region, region_tag=f"strip:{delta!r}:{inner}")
    if inner == "dirichlet":
        # one extra layer beyond the cut; dropping it from the principal
        # submatrix imposes f = 0 across the inner surface
        region = lambda X: domain.signed_distance(X) <= delta + h  # noqa: E731
        grid = _singular_grid(domain, h, octant, region=region, region_tag=f"strip:{delta!r}:{inner}")
    op = assemble(domain, grid, "L", {"lam": lam, "alpha": 0.0, "boundary": "dirichlet"})
    den = op.vol * grid.radius**lam / grid.distance**2
    A = op.A
    if inner == "dirichlet":
        idx = np.flatnonzero(grid.distance <= delta - 0.5 * h)
        A = A[idx][:, idx]
        den = den[idx]
    q = generalized_min_quotient(A, den)
    return InequalityVerdict(
        id="strip-hardy",
        constant=q.mu,
        direction="min",
        passed=bool(0.25 <= q.mu <= 0.45),
        target=0.25,
        count=grid.n,
        extra={"delta": delta, "h": h, "layers": layers, "inner": inner, "residual": q.residual},
    )


def strip_hardy_1d(delta, n, inner="dirichlet"):
    """``min int f'^2 / int f^2/x^2`` on ``(0, delta)`` with ``f(0) = 0``.

    ``inner="dirichlet"`` also imposes ``f(delta) = 0``; ``"free"`` leaves it
    free.  Staggered nodes ``(k + 1/2) delta/n``.
    """
    hh = delta / n
    x = (np.arange(n) + 0.5) * hh
    main = np.full(n, 2.0)
    main[0] = 3.0  # boundary at half a cell
    if inner == "dirichlet":
        main[-1] = 3.0
    else:
        main[-1] = 1.0
    A = sp.diags([main, -np.ones(n - 1), -np.ones(n - 1)], [0, 1, -1]) / hh
    B = hh / x**2
    return generalized_min_quotient(A.tocsr(), B).mu


def veps_potential(grid, eps):
    """``(N-2)^2/(4|x|^2)`` where ``d >= eps`` and ``1/(4 d^2)`` where ``d < eps``."""
    N = grid.dim
    d = grid.distance
    return np.where(d >= eps, (N - 2) ** 2 / (4 * grid.radius**2), 1.0 / (4 * d**2))


def veps_hardy_check(domain, eps, h, family=None, slack=0.05):
    """``int |grad u|^2 >= int V_eps u^2`` on a family and as a pencil minimum."""
    if domain.dim < 3:
        raise ValueError("needs N >= 3")
    eps0 = 0.1 * domain.inradius
    if eps > eps0 * (1 + 1e-12):
        raise ValueError(f"eps must not exceed the threshold proxy {eps0:g}")
    grid = _singular_grid(domain, h, octant=False)
    op = assemble(domain, grid, "laplacian")
    V = veps_potential(grid, eps)
    family = family or TestFunctionFamily(count=200, seed=11)
    S = op.A
    worst = math.inf
    fails = 0
    for _, u in family.members(grid):
        lhs = float(u @ (S @ u))
        rhs = float(np.sum(op.vol * V * u * u))
        worst = min(worst, lhs / rhs)
        fails += lhs < rhs
    q = generalized_min_quotient(S, op.vol * V)
    return InequalityVerdict(
        id="veps-hardy",
        constant=q.mu,
        direction="min",
        passed=bool(fails == 0 and q.mu >= 1 - slack),
        target=1 - slack,
        label="quotient+sampled",
        count=family.count,
        extra={"eps": eps, "h": h, "family_min_ratio": worst, "family_failures": int(fails)},
    )


def bft_hardy_constant(domain, h, D=None, slack=0.1):
    """``inf (int |grad u|^2 - int u^2/(4d^2)) / (1/4) int X^2(d/D) u^2/d^2``."""
    if not domain.convex:
        raise ValueError("needs a convex domain")
    D = domain.max_distance if D is None else D
    if D < domain.max_distance * (1 - 1e-12):
        raise ValueError("D must be at least sup d")
    grid = _singular_grid(domain, h, octant=False)
    op = assemble(domain, grid, "H")
    d = grid.distance
    den = 0.25 * op.vol * X(d / D) ** 2 / d**2
    q = generalized_min_quotient(op.A, den)
    return InequalityVerdict(
        id="log-remainder-hardy",
        constant=q.mu,
        direction="min",
        passed=bool(q.mu >= 1 - slack),
        target=1 - slack,
        count=grid.n,
        extra={"D": D, "h": h, "residual": q.residual},
    )


# ---------------------------------------------------------------------------
# sampled inequalities


def _excluded(num, energy, h):
    """Members with a negative numerator; flagged when beyond ``-h`` times the energy."""
    neg = num < 0
    return neg, neg & (num < -h * energy)


def hardy_moser_check(domain, h, family=None):
    """``C = min [int(|grad u|^2 - u^2/(4d^2))] (int u^2)^{2/N} / int |u|^{2(1+2/N)}``."""
    if not domain.convex:
        raise ValueError("needs a convex domain")
    N = domain.dim
    grid = _singular_grid(domain, h, octant=False)
    op = assemble(domain, grid, "H")
    lap = assemble(domain, grid, "laplacian")
    family = family or TestFunctionFamily(count=200, seed=21)
    vol = op.vol
    ratios = []
    excl = 0
    flagged = 0
    for _, u in family.members(grid):
        num = float(u @ (op.A @ u))
        neg, flag = _excluded(np.array([num]), float(u @ (lap.A @ u)), h)
        if neg[0]:
            excl += 1
            flagged += int(flag[0])
            continue
        l2 = float(np.sum(vol * u * u))
        lp = float(np.sum(vol * np.abs(u) ** (2 * (1 + 2 / N))))
        ratios.append(num * l2 ** (2 / N) / lp)
    C = float(min(ratios)) if ratios else 0.0
    return InequalityVerdict(
        id="hardy-moser",
        constant=C,
        direction="min",
        passed=bool(C > 0 and excl < 0.01 * family.count),
        label="sampled",
        count=family.count,
        excluded=excl,
        extra={"h": h, "flagged": flagged},
    )


def node_gradient(grid, u, dirichlet=True):
    """Central-difference gradient at nodes.

    Missing neighbours count as zero when ``dirichlet``; otherwise the
    difference becomes one-sided.
    """
    g = np.zeros((grid.n, grid.dim))
    for ax in range(grid.dim):
        e = np.zeros(grid.dim, int)
        e[ax] = 1
        ip = grid.lookup(grid.lattice + e)
        im = grid.lookup(grid.lattice - e)
        if dirichlet:
            up = np.where(ip >= 0, u[ip], 0.0)
            um = np.where(im >= 0, u[im], 0.0)
            g[:, ax] = (up - um) / (2 * grid.h)
        else:
            up = np.where(ip >= 0, u[ip], u)
            um = np.where(im >= 0, u[im], u)
            span = (ip >= 0).astype(float) + (im >= 0)
            g[:, ax] = (up - um) / (np.maximum(span, 1.0) * grid.h)
    return g


def weighted_l1_check(domain, h, alpha=1.0, delta=None, family=None):
    """``int d^a |grad v| + int_{d > delta} d^{a-1} |v| >= C (int d^{aN/(N-1)} |v|^{N/(N-1)})^{(N-1)/N}``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    N = domain.dim
    if N < 2:
        raise ValueError("needs N >= 2")
    delta = 0.2 * domain.inradius if delta is None else delta
    grid = build_grid(domain, h)
    d = grid.distance
    vol = h**N
    family = family or TestFunctionFamily(count=200, seed=31)
    p = N / (N - 1)
    ratios = []
    for _, v in family.members(grid):
        gr = np.linalg.norm(node_gradient(grid, v), axis=1)
        lhs = vol * (np.sum(d**alpha * gr) + np.sum(np.where(d > delta, d ** (alpha - 1) * np.abs(v), 0.0)))
        rhs = (vol * np.sum(d ** (alpha * p) * np.abs(v) ** p)) ** (1 / p)
        ratios.append(lhs / rhs)
    C = float(min(ratios))
    return InequalityVerdict(
        id="weighted-l1-sobolev",
        constant=C,
        direction="min",
        passed=bool(C > 0),
        label="sampled",
        count=family.count,
        extra={"alpha": alpha, "delta": delta, "h": h},
    )


def hardy_sobolev_checks(domain, h, family=None, q=None, which=("origin-log", "origin-weighted", "boundary-q", "l1"),
                         alpha=1.0, delta=None, D=None):
    """Sampled Sobolev-type inequalities.

    origin-log
        ``int |grad v|^2 |x|^{2-N} >= C (int v^{2N/(N-2)} |x|^{-N} X^{2(N-1)/(N-2)}(|x|/D))^{(N-2)/N}``
    origin-weighted
        ``int |grad v|^2 |x|^{2-N} >= C (int v^{2N/(N-2)} |x|^{2-N})^{(N-2)/N}``
    boundary-q
        ``int (|grad u|^2 - u^2/(4 d^2)) >= C (int d^{q(N-2)/2 - N} |u|^q)^{2/q}`` on convex domains
    l1
        the weighted ``L^1`` inequality of :func:`weighted_l1_check`.
    """
    N = domain.dim
    family = family or TestFunctionFamily(count=200, seed=41)
    out = {}
    if "origin-log" in which or "origin-weighted" in which:
        if N < 3:
            raise ValueError("origin inequalities need N >= 3")
        grid = build_grid(domain, h)
        op = assemble(domain, grid, "L", {"lam": 2.0 - N, "alpha": 0.0})
        r = grid.radius
        Dv = D if D is not None else float(np.max(np.linalg.norm(np.array(domain.bounding_box()), axis=1)))
        if isinstance(domain, Ball):
            Dv = D if D is not None else domain.radius
        s = 2 * N / (N - 2)
        w_log = r ** (-N) * X(np.minimum(r / Dv, 1.0)) ** (2 * (N - 1) / (N - 2))
        w_pow = r ** (2 - N)
        rl, rp = [], []
        for _, v in family.members(grid):
            lhs = float(v @ (op.A @ v))
            a = np.abs(v) ** s
            rl.append(lhs / (op.vol @ (a * w_log)) ** ((N - 2) / N))
            rp.append(lhs / (op.vol @ (a * w_pow)) ** ((N - 2) / N))
        if "origin-log" in which:
            out["origin-log"] = InequalityVerdict(
                "origin-log-sobolev", float(min(rl)), "min", bool(min(rl) > 0), label="sampled",
                count=family.count, extra={"D": Dv, "h": h})
        if "origin-weighted" in which:
            out["origin-weighted"] = InequalityVerdict(
                "origin-weighted-sobolev", float(min(rp)), "min", bool(min(rp) > 0), label="sampled",
                count=family.count, extra={"h": h})
    if "boundary-q" in which:
        if not domain.convex:
            raise ValueError("needs a convex domain")
        qmax = 2 * N / (N - 2) if N >= 3 else math.inf
        qv = q if q is not None else (qmax if N >= 3 else 4.0)
        if not (2 < qv <= qmax) or (N == 2 and not math.isfinite(qv)):
            raise ValueError(f"q={qv} not admissible: need 2 < q <= 2N/(N-2)")
        grid = _singular_grid(domain, h, octant=False)
        op = assemble(domain, grid, "H")
        lap = assemble(domain, grid, "laplacian")
        d = grid.distance
        wq = d ** (qv * (N - 2) / 2 - N)
        rs = []
        excl = 0
        for _, u in family.members(grid):
            num = float(u @ (op.A @ u))
            if num < 0:
                excl += 1
                continue
            rs.append(num / (op.vol @ (wq * np.abs(u) ** qv)) ** (2 / qv))
        out["boundary-q"] = InequalityVerdict(
            "boundary-hardy-sobolev", float(min(rs)), "min", bool(min(rs) > 0 and excl < 0.01 * family.count),
            label="sampled", count=family.count, excluded=excl, extra={"q": qv, "h": h})
        del lap
    if "l1" in which:
        out["l1"] = weighted_l1_check(domain, h, alpha, delta, family)
    return out


def entropy_forms(grid, op, u, kind):
    """Entropy, energy and squared norm of the two logarithmic inequalities.

    kind ``"origin"``: ``int u^2 log(u / (||u|| |x|^{(2-N)/2} d))`` against the
    ``K`` energy and ``||u||^2 = int u^2``.

    kind ``"boundary"``: ``int v^2 log(v/||v||) d`` against
    ``int (|grad v|^2 d - (1/2) lap d v^2)``, evaluated as the ``H`` energy of
    ``v d^{1/2}``, and ``||v||^2 = int v^2 d``.
    """
    u = np.asarray(u, float)
    vol = op.vol
    N = grid.dim
    d = grid.distance
    pos = u > 0
    if kind == "origin":
        n2 = float(np.sum(vol * u * u))
        ref = math.sqrt(n2) * grid.radius ** ((2 - N) / 2) * d
        ent = float(np.sum(vol[pos] * u[pos] ** 2 * np.log(u[pos] / ref[pos])))
        Q = float(u @ (op.A @ u))
    elif kind == "boundary":
        n2 = float(np.sum(vol * u * u * d))
        ent = float(np.sum(vol[pos] * u[pos] ** 2 * np.log(u[pos] / math.sqrt(n2)) * d[pos]))
        w = u * np.sqrt(d)
        Q = float(w @ (op.A @ w))
    else:
        raise ValueError(kind)
    return ent, Q, n2


def log_sobolev_checks(domain, h, kind, family=None, eps_grid=DEFAULT_EPS_GRID):
    """Fit ``K`` in ``ent <= eps Q + (K - kappa log eps) ||u||^2`` over a family and an eps grid.

    ``kappa = (N+2)/4`` for ``kind="origin"`` (operator ``K``, members vanish
    near the origin) and ``(N+1)/4`` for ``kind="boundary"`` (operator ``H``).
    For each member the bound is tightest at ``eps* = kappa ||u||^2 / Q``;
    ``attained`` records whether the grid maximiser is within one grid step
    of ``eps*`` for the worst member.
    """
    N = domain.dim
    eps = np.asarray(eps_grid, float)
    step = float(np.max(np.diff(np.log(eps))))
    if kind == "origin":
        if N < 3 or not domain.contains_origin:
            raise ValueError("needs N >= 3 and the origin inside")
        kappa = (N + 2) / 4
        grid = _singular_grid(domain, h, octant=False)
        op = assemble(domain, grid, "K")
        family = family or TestFunctionFamily(count=200, seed=51, avoid_origin=0.1 * domain.inradius,
                                              nonnegative=True)
    elif kind == "boundary":
        if not domain.convex:
            raise ValueError("needs a convex domain")
        kappa = (N + 1) / 4
        grid = _singular_grid(domain, h, octant=False)
        op = assemble(domain, grid, "H")
        family = family or TestFunctionFamily(count=200, seed=61, nonnegative=True)
    else:
        raise ValueError(kind)
    best = -math.inf
    worst = None
    excl = 0
    for j, u in family.members(grid):
        ent, Q, n2 = entropy_forms(grid, op, u, kind)
        if Q <= 0:
            excl += 1
            continue
        Kvals = ent / n2 - eps * Q / n2 + kappa * np.log(eps)
        i = int(np.argmax(Kvals))
        if Kvals[i] > best:
            best = float(Kvals[i])
            worst = (j, float(eps[i]), kappa * n2 / Q)
    j, e_grid, e_star = worst
    attained = abs(math.log(e_grid) - math.log(e_star)) <= step * (1 + 1e-9)
    return InequalityVerdict(
        id="log-hardy-sobolev" if kind == "origin" else "log-sobolev-boundary",
        constant=best,
        direction="max",
        passed=bool(math.isfinite(best) and attained and excl < 0.01 * family.count),
        label="sampled",
        count=family.count,
        excluded=excl,
        extra={"kappa": kappa, "worst_member": j, "worst_eps": e_grid, "eps_star": e_star,
               "attained": bool(attained), "h": h},
    )


# ---------------------------------------------------------------------------
# local inequalities on boundary-adapted balls


def _local_grid(domain, ball, h):
    try:
        grid = build_grid(domain, h, region=ball.contains, region_tag=f"ball:{tuple(ball.center)}:{ball.radius}")
    except ResolutionError as exc:
        raise ResolutionError(f"discrete ball too small: {exc}") from exc
    if grid.n < 8:
        raise ResolutionError("discrete ball has fewer than 8 nodes")
    return grid


def local_poincare_constant(domain, w, x, r, h, gamma=1.5):
    """``C_P = 1/(mu r^2)`` with ``mu`` the first nonzero eigenvalue of the free weighted pencil."""
    ball = make_ball(domain, x, r, gamma, allow_boundary=True)
    grid = _local_grid(domain, ball, h)
    op = assemble(domain, grid, "L", {"lam": w.lam, "alpha": w.alpha, "boundary": "free"})
    q = generalized_min_quotient(op.A, op.m, constraint="mean-zero")
    return InequalityVerdict(
        id="local-poincare",
        constant=1.0 / (q.mu * r * r),
        direction="max",
        passed=bool(q.mu > 0),
        count=grid.n,
        extra={"mu": float(q.mu), "mu_r2": float(q.mu * r * r), "kind": ball.kind, "r": r, "h": h},
    )


def local_moser_check(domain, w, x, r, h, nu=None, family=None, gamma=1.5):
    """Fitted ``C_M`` of the local weighted Moser inequality on ``B(x, r)``.

    Members vanish on the boundary of the ball but are free on the domain
    boundary.  For interior balls with ``lam != 0`` the volume factor is
    ``r^N (|x| + r)^lam``; otherwise the discrete weighted volume of the ball.
    """
    N = domain.dim
    ball = make_ball(domain, x, r, gamma, allow_boundary=True)
    nu = (N + w.alpha) if nu is None else nu
    if nu < N:
        raise ValueError("nu must be at least N")
    grid = _local_grid(domain, ball, h)
    op = assemble(domain, grid, "L", {"lam": w.lam, "alpha": w.alpha, "boundary": "free"})
    family = family or TestFunctionFamily(count=60, seed=71, support="vanish-on-ball-boundary", ball=ball)
    if family.support != "vanish-on-ball-boundary":
        raise ValueError("the local Moser family must vanish on the ball boundary only")
    m = op.m
    if w.lam != 0 and ball.kind == "euclidean":
        V = r**N * (np.linalg.norm(x) + r) ** w.lam
    else:
        V = float(m.sum())
    p = 2 * (1 + 2 / nu)
    worst = 0.0
    for _, f in family.members(grid):
        lhs = float(m @ np.abs(f) ** p)
        rhs = r * r * V ** (-2 / nu) * float(f @ (op.A @ f)) * float(m @ (f * f)) ** (2 / nu)
        worst = max(worst, lhs / rhs)
    return InequalityVerdict(
        id="local-moser",
        constant=worst,
        direction="max",
        passed=bool(np.isfinite(worst) and worst > 0),
        label="sampled",
        count=family.count,
        extra={"nu": nu, "kind": ball.kind, "r": r, "h": h, "V": V},
    )


def mean_value_check(op, x, r, seeds=(0, 1, 2), gamma=1.5, fields=None, steps=32):
    """Fitted ``C`` with ``sup v^2 <= C/(r^2 V) int int |y|^lam d^alpha v^2``.

    ``v`` are positive solutions on the whole domain; the sup runs over
    ``B(x, r/2) x (r^2/2, r^2)`` and the integral over ``B(x, r) x (0, r^2)``
    (trapezoid in time, starting from the initial data).  ``V`` is the
    discrete weighted volume of ``B(x, r)``, so constant fields give ``C = 1``.
    """
    grid = op.grid
    domain = grid.domain
    big = make_ball(domain, x, r, gamma, allow_boundary=True)
    small = make_ball(domain, x, r / 2, gamma, allow_boundary=True)
    inb = np.flatnonzero(big.contains(grid.positions))
    ins = np.flatnonzero(small.contains(grid.positions))
    if len(inb) == 0 or len(ins) == 0:
        raise ValueError("ball contains no grid node")
    V = float(op.m[inb].sum())
    times = np.linspace(0, r * r, steps + 1)[1:]
    if fields is None:
        fields = generate_positive_solution(op, list(seeds), times)
    best = 0.0
    for f in fields:
        vals, ts = f.values, f.times
        window = (ts >= r * r / 2 - 1e-15) & (ts <= r * r + 1e-15)
        sup = float(np.max(vals[np.ix_(window, ins)] ** 2))
        integrand = (vals[:, inb] ** 2) @ op.m[inb]
        if f.seed is not None:
            u0 = random_positive_data(grid, f.seed)
            ts = np.concatenate([[0.0], ts])
            integrand = np.concatenate([[float((u0[inb] ** 2) @ op.m[inb])], integrand])
        else:
            ts = np.concatenate([[0.0], ts])
            integrand = np.concatenate([[integrand[0]], integrand])
        total = float(np.trapezoid(integrand, ts))
        best = max(best, sup * r * r * V / total)
    return InequalityVerdict(
        id="mean-value",
        constant=best,
        direction="max",
        passed=bool(np.isfinite(best) and best > 0),
        label="sampled",
        count=len(fields),
        extra={"r": r, "kind": big.kind, "V": V},
    )
