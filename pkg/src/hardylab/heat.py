"""Heat semigroup evolution, kernel columns, Green functions and a dense oracle.

The discrete semigroup is ``exp(-t M^{-1} A)``.  Time stepping uses the
theta scheme

    (M + theta dt A) u_{k+1} = (M - (1 - theta) dt A) u_k

with one sparse LU factorization per distinct step size.  A discrete
delta at node ``y`` is ``e_y / m_y`` so that columns approximate
``k(t, ., y)`` against the operator's measure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "HeatSolverError",
    "TimeTooSmallError",
    "OracleSizeError",
    "NotInvertibleError",
    "DtPolicy",
    "ThetaStepper",
    "evolve",
    "KernelSlice",
    "kernel_column",
    "kernel_columns",
    "DenseOracle",
    "dense_expm_oracle",
    "GreenVector",
    "green_function",
    "resolution_floor",
]

ORACLE_MAX = 3000


class HeatSolverError(RuntimeError):
    """Inner linear solve failed."""


class TimeTooSmallError(ValueError):
    """Requested time below the resolution floor ``4 h^2``."""


class OracleSizeError(ValueError):
    """Too many nodes for the dense oracle."""


class NotInvertibleError(ValueError):
    """The operator is not positive definite."""


def resolution_floor(grid):
    return 4.0 * grid.h**2


@dataclass(frozen=True)
class DtPolicy:
    """Geometric ramp ``dt_k = min(dt_max, dt0 rho^k)``.

    ``startup`` implicit Euler steps are taken first (damping of the
    unresolved modes of delta data under Crank-Nicolson).
    """

    dt0: float
    rho: float = 1.2
    dt_max: float = np.inf
    startup: int = 4

    @classmethod
    def default(cls, t_min, t_max):
        return cls(dt0=t_min / 64.0, rho=1.2, dt_max=t_max / 64.0)

    def as_dict(self):
        return {"dt0": self.dt0, "rho": self.rho, "dt_max": self.dt_max, "startup": self.startup}


class ThetaStepper:
    """Theta-scheme integrator with factorizations cached per step size."""

    def __init__(self, op, theta=0.5):
        if not 0.5 <= theta <= 1.0:
            raise ValueError("theta must lie in [1/2, 1]")
        self.A = op.A.tocsc()
        self.M = sp.diags(op.m).tocsc()
        self.theta = theta
        self._lu = {}

    def _factor(self, dt, theta):
        key = (round(dt, 15), theta)
        lu = self._lu.get(key)
        if lu is None:
            try:
                lu = spla.splu((self.M + theta * dt * self.A).tocsc())
            except RuntimeError as exc:
                raise HeatSolverError(f"factorization failed at dt={dt:g}: {exc}") from exc
            if len(self._lu) > 256:
                self._lu.clear()
            self._lu[key] = lu
        return lu

    def step(self, u, dt, theta=None):
        th = self.theta if theta is None else theta
        rhs = self.M @ u - (1.0 - th) * dt * (self.A @ u) if th < 1 else self.M @ u
        lu = self._factor(dt, th)
        out = lu.solve(np.asarray(rhs))
        if not np.all(np.isfinite(out)):
            raise HeatSolverError("non-finite values in the time step")
        return out

    def run(self, u0, times, policy):
        """Values at each of ``times`` (sorted, positive) from ``u0`` at ``t=0``."""
        times = np.asarray(times, float)
        if np.any(np.diff(times) <= 0) or times[0] <= 0:
            raise ValueError("times must be positive and increasing")
        u = np.array(u0, float, copy=True)
        out = np.empty((len(times),) + u.shape)
        t = 0.0
        k = 0
        j = 0
        while j < len(times):
            dt = min(policy.dt_max, policy.dt0 * policy.rho**k)
            target = times[j]
            last = t + dt >= target * (1 - 1e-12)
            if last:
                dt = target - t
            elif t + 2 * dt > target:
                # split the remainder evenly instead of leaving a sliver
                dt = 0.5 * (target - t)
            theta = 1.0 if k < policy.startup else None
            u = self.step(u, dt, theta)
            t = target if last else t + dt
            k += 1
            if last:
                out[j] = u
                j += 1
        return out


def evolve(op, u0, t, theta=0.5, policy=None):
    """``u(t)`` for ``u_t = -M^{-1} A u``, ``u(0) = u0``."""
    if t <= 0:
        raise ValueError("t must be positive")
    policy = policy or DtPolicy.default(t, t)
    return ThetaStepper(op, theta).run(u0, [t], policy)[0]


@dataclass(eq=False)
class KernelSlice:
    """Kernel column ``k(t_j, ., y)`` over a time ladder."""

    source: int
    times: np.ndarray
    values: np.ndarray
    mass: np.ndarray
    theta: float
    policy: dict
    undershoot: float = 0.0
    symmetry: list = field(default_factory=list)

    def at(self, node):
        return self.values[:, node]


def _check_times(op, times):
    times = np.asarray(times, float)
    floor = resolution_floor(op.grid)
    if times.min() < floor * (1 - 1e-12):
        raise TimeTooSmallError(f"time {times.min():g} below the floor 4h^2 = {floor:g}")
    return times


def kernel_columns(op, sources, times, theta=0.5, policy=None, undershoot_tol=1e-10, check_floor=True):
    """Kernel columns for several sources evolved together.

    Crank-Nicolson is retried with ``theta = 1`` if the relative undershoot
    exceeds ``undershoot_tol``.  With two or more sources the symmetry
    ``k(t, y_a, y_b) = k(t, y_b, y_a)`` is recorded for up to three pairs.
    """
    times = _check_times(op, times) if check_floor else np.asarray(times, float)
    sources = [int(s) for s in sources]
    policy = policy or DtPolicy.default(times.min(), times.max())
    U0 = np.zeros((op.n, len(sources)))
    for j, s in enumerate(sources):
        U0[s, j] = 1.0 / op.m[s]
    used = theta
    vals = ThetaStepper(op, theta).run(U0, times, policy)
    under = float(max(0.0, -vals.min() / vals.max()))
    if under > undershoot_tol and theta < 1:
        used = 1.0
        vals = ThetaStepper(op, 1.0).run(U0, times, policy)
        under = float(max(0.0, -vals.min() / vals.max()))
    slices = []
    for j, s in enumerate(sources):
        V = vals[:, :, j]
        slices.append(
            KernelSlice(
                source=s,
                times=times,
                values=V,
                mass=V @ op.m,
                theta=used,
                policy=policy.as_dict(),
                undershoot=under,
            )
        )
    pairs = [(a, b) for a in range(len(sources)) for b in range(a + 1, len(sources))][:3]
    for a, b in pairs:
        ya, yb = sources[a], sources[b]
        kab = slices[b].values[:, ya]
        kba = slices[a].values[:, yb]
        rel = np.abs(kab - kba) / np.maximum(np.abs(kab), 1e-300)
        rec = (ya, yb, float(rel.max()))
        slices[a].symmetry.append(rec)
        slices[b].symmetry.append(rec)
    return slices


def kernel_column(op, y, times, theta=0.5, policy=None, **kw):
    """Kernel column ``k(t, ., y)`` for a single source node ``y``."""
    return kernel_columns(op, [y], times, theta, policy, **kw)[0]


class DenseOracle:
    """Full eigendecomposition of ``M^{-1/2} A M^{-1/2}``."""

    def __init__(self, op):
        if op.n > ORACLE_MAX:
            raise OracleSizeError(f"{op.n} nodes exceed the dense oracle limit {ORACLE_MAX}")
        self.m = op.m.copy()
        s = 1.0 / np.sqrt(self.m)
        Ad = op.A.toarray() * s[:, None] * s[None, :]
        self.w, U = sl.eigh(0.5 * (Ad + Ad.T))
        self.V = U * s[:, None]

    def kernel(self, t):
        """Symmetric matrix ``K(t)`` with ``u(t) = K(t) M u0``."""
        K = (self.V * np.exp(-t * self.w)[None, :]) @ self.V.T
        return 0.5 * (K + K.T)

    def column(self, t, y):
        return self.V @ (np.exp(-t * self.w) * self.V[y])

    def green(self):
        if self.w[0] <= 0:
            raise NotInvertibleError("smallest eigenvalue is not positive")
        return (self.V / self.w[None, :]) @ self.V.T

    def time_integrated_green(self, y, t_min=1e-8, t_max=None, points=400):
        """``int_0^inf k(t, ., y) dt`` by a trapezoid rule on a log ladder.

        The tail beyond ``t_max`` is extrapolated with ``exp(-lam1 t)`` and
        the head below ``t_min`` with the trapezoid from ``t = 0``.
        """
        lam1 = self.w[0]
        if lam1 <= 0:
            raise NotInvertibleError("smallest eigenvalue is not positive")
        t_max = t_max or 30.0 / lam1
        ts = np.geomspace(t_min, t_max, points)
        cols = np.stack([self.column(t, y) for t in ts])
        total = np.trapezoid(cols, ts, axis=0)
        delta = np.zeros_like(self.m)
        delta[y] = 1.0 / self.m[y]
        total += 0.5 * t_min * (delta + cols[0])
        total += cols[-1] / lam1
        return total


def dense_expm_oracle(op, t):
    """Kernel matrix ``K(t)`` of the discrete semigroup, exact up to rounding."""
    return DenseOracle(op).kernel(t)


@dataclass(eq=False)
class GreenVector:
    source: int
    g: np.ndarray
    residual: float
    iterations: int


def green_function(op, y, lam1=None, rtol=1e-10, maxiter=None):
    """Solve ``A g = e_y`` (the discrete ``delta_y / m_y`` against ``m``).

    Jacobi-preconditioned conjugate gradients.  ``lam1`` is the principal
    eigenvalue; it is computed when not supplied and must be positive.
    """
    if lam1 is None:
        from .spectral import principal_eigenpair

        lam1 = principal_eigenpair(op).lam
    if lam1 <= 0:
        raise NotInvertibleError(f"principal eigenvalue {lam1:g} is not positive")
    b = np.zeros(op.n)
    b[int(y)] = 1.0
    A = op.A.tocsr()
    dinv = 1.0 / A.diagonal()
    pre = spla.LinearOperator(A.shape, matvec=lambda v: dinv * v, dtype=float)
    count = [0]

    def cb(_):
        count[0] += 1

    g, info = spla.cg(A, b, rtol=rtol, atol=0.0, M=pre, maxiter=maxiter or 20 * op.n, callback=cb)
    res = float(np.linalg.norm(A @ g - b) / np.linalg.norm(b))
    if info != 0 or res > 10 * rtol:
        raise HeatSolverError(f"conjugate gradients stalled: info={info}, residual={res:.2e}")
    return GreenVector(source=int(y), g=g, residual=res, iterations=count[0])
