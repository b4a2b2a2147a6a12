"""Deterministic test-function families on grid nodes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["KINDS", "SUPPORTS", "TestFunctionFamily", "ball_gauge", "smooth_step"]

KINDS = ("tensor-sine", "mollified-random-field", "radial-bump", "boundary-layer")
SUPPORTS = ("vanish-on-boundary", "vanish-on-ball-boundary", "free-on-boundary")


def smooth_step(s):
    """C^1 step: 0 for ``s <= 0``, 1 for ``s >= 1``."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3 - 2 * s)


def ball_gauge(ball, y):
    """``< 1`` inside the (euclidean or boundary-adapted) ball, ``1`` on its boundary."""
    y = np.atleast_2d(y)
    if ball.kind == "euclidean":
        return np.linalg.norm(y - ball.center[None, :], axis=1) / ball.radius
    yt, off = ball.chart_coordinates(y)
    tang = np.linalg.norm(yt, axis=1) if yt.shape[1] else np.zeros(len(y))
    off = np.where(np.isfinite(off), off, np.inf)
    return np.maximum(tang, np.abs(off - ball.d_center)) / ball.radius


@dataclass
class TestFunctionFamily:
    """Mixed family of ``count`` smooth node functions.

    Parameters
    ----------
    count : int
    seed : int
    support : str
        ``vanish-on-boundary`` multiplies non-vanishing generators by a
        distance profile, ``vanish-on-ball-boundary`` by a cut-off of
        ``ball`` that is free on the domain boundary, ``free-on-boundary``
        leaves them as they are.
    kinds : tuple of str
        Generators used in rotation.
    ball : BallSpec, optional
        Required for ``vanish-on-ball-boundary``.
    avoid_origin : float
        Members vanish for ``|x| < avoid_origin``.
    nonnegative : bool
        Take absolute values.
    """

    __test__ = False  # not a pytest class

    count: int = 200
    seed: int = 0
    support: str = "vanish-on-boundary"
    kinds: tuple = KINDS
    ball: object = None
    avoid_origin: float = 0.0
    nonnegative: bool = False

    def __post_init__(self):
        if self.support not in SUPPORTS:
            raise ValueError(f"unknown support constraint {self.support!r}")
        if self.support == "vanish-on-ball-boundary" and self.ball is None:
            raise ValueError("ball support needs a BallSpec")
        bad = set(self.kinds) - set(KINDS)
        if bad:
            raise ValueError(f"unknown generator kinds {sorted(bad)}")
        if self.count < 1:
            raise ValueError("count must be positive")

    def params(self):
        return {
            "count": self.count,
            "seed": self.seed,
            "support": self.support,
            "kinds": list(self.kinds),
            "avoid_origin": self.avoid_origin,
            "nonnegative": self.nonnegative,
        }

    # -- generators ---------------------------------------------------------
    def _frame(self, grid):
        if self.support == "vanish-on-ball-boundary":
            lo, hi = self.ball.bounding_box()
            inside = np.isfinite(ball_gauge(self.ball, grid.positions))
            pts = grid.positions[inside] if np.any(inside) else grid.positions
            return np.maximum(lo, pts.min(axis=0)), np.minimum(hi, pts.max(axis=0))
        lo, hi = grid.domain.bounding_box()
        return np.asarray(lo, float), np.asarray(hi, float)

    def _tensor_sine(self, grid, rng, j):
        lo, hi = self._frame(grid)
        L = hi - lo
        k = np.ones(grid.dim, int) if j == 0 else rng.integers(1, 5, size=grid.dim)
        z = (grid.positions - lo[None, :]) / L[None, :]
        return np.prod(np.sin(np.pi * k[None, :] * z), axis=1), True

    def _random_field(self, grid, rng, j):
        lo, hi = self._frame(grid)
        L = float(np.max(hi - lo))
        modes = 8
        w = rng.normal(scale=2.0 / L, size=(modes, grid.dim))
        ph = rng.uniform(0, 2 * np.pi, modes)
        a = rng.normal(size=modes)
        f = np.cos(2 * np.pi * grid.positions @ w.T + ph[None, :]) @ a
        return 1.5 + f / np.sqrt(0.5 * np.sum(a * a) + 1e-300) * 0.5, False

    def _radial_bump(self, grid, rng, j):
        pos = grid.positions
        d = grid.distance
        if self.support == "vanish-on-ball-boundary":
            g = ball_gauge(self.ball, pos)
            cand = np.flatnonzero(g < 0.6)
        else:
            cand = np.flatnonzero(d > 4 * grid.h)
        if len(cand) == 0:
            cand = np.arange(grid.n)
        c = pos[cand[rng.integers(len(cand))]]
        dc = float(grid.domain.signed_distance(c))
        rho = max(dc * rng.uniform(0.4, 0.95), 3 * grid.h)
        s = np.sum((pos - c[None, :]) ** 2, axis=1) / rho**2
        out = np.zeros(grid.n)
        m = s < 1
        out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m]))
        if not np.any(out > 0):
            out[grid.nearest_node(c)] = 1.0
        return out, True

    def _boundary_layer(self, grid, rng, j):
        d = grid.distance
        beta = rng.uniform(0.6, 2.0)
        ell = rng.uniform(0.05, 0.3) * grid.domain.inradius
        w = rng.normal(scale=1.0, size=grid.dim)
        mod = 1.0 + 0.3 * np.cos(2 * np.pi * grid.positions @ w + rng.uniform(0, 2 * np.pi))
        return d**beta * np.exp(-d / ell) * mod, True

    def member(self, grid, j):
        """The ``j``-th member as a node vector on ``grid``."""
        rng = np.random.default_rng([self.seed, j])
        kind = self.kinds[j % len(self.kinds)]
        gen = {
            "tensor-sine": self._tensor_sine,
            "mollified-random-field": self._random_field,
            "radial-bump": self._radial_bump,
            "boundary-layer": self._boundary_layer,
        }[kind]
        u, vanishes = gen(grid, rng, j // len(self.kinds))
        if self.support == "vanish-on-boundary" and not vanishes:
            u = u * np.minimum(grid.distance / (0.5 * grid.domain.inradius), 1.0)
        if self.support == "vanish-on-ball-boundary":
            g = ball_gauge(self.ball, grid.positions)
            u = u * np.where(g < 1, (1 - np.minimum(g, 1) ** 2) ** 2, 0.0)
        if self.support == "free-on-boundary" and kind == "tensor-sine" and j > 0:
            u = u + 1.0
        if self.avoid_origin > 0:
            u = u * smooth_step(grid.radius / self.avoid_origin - 1.0)
        if self.nonnegative:
            u = np.abs(u)
        if not np.any(u != 0):
            raise RuntimeError(f"family member {j} vanishes identically")
        return u

    def members(self, grid):
        for j in range(self.count):
            yield j, self.member(grid, j)

    def matrix(self, grid):
        return np.stack([self.member(grid, j) for j in range(self.count)], axis=1)
