import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import jnp_zeros

from hardylab.discretize import ResolutionError, assemble, build_grid
from hardylab.families import TestFunctionFamily
from hardylab.geometry import Ball, Box, WeightParams, make_ball
from hardylab.harnack import Field
from hardylab.inequalities import (
    X,
    bft_hardy_constant,
    boundary_strip_hardy,
    entropy_forms,
    hardy_moser_check,
    hardy_sobolev_checks,
    improved_hardy_constant,
    weighted_l1_check,
    local_moser_check,
    local_poincare_constant,
    log_sobolev_checks,
    mean_value_check,
    node_gradient,
    plain_hardy_constant,
    strip_hardy_1d,
    veps_hardy_check,
    veps_potential,
)

SQUARE = Box((0.0, 0.0), (1.0, 1.0))
CUBE = Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
BALL3 = Ball(1.0, 3)
SMALL = TestFunctionFamily(count=40, seed=5)


def test_family_support_and_nonzero():
    g = build_grid(SQUARE, 1 / 16)
    fam = TestFunctionFamily(count=16, seed=1)
    M = fam.matrix(g).T
    assert M.shape == (16, g.n)
    assert np.all(np.abs(M).max(axis=1) > 0)
    edge = g.dirichlet
    np.testing.assert_allclose(M[:, g.distance < 1e-12], 0.0)
    assert edge.any()
    ball = make_ball(SQUARE, [0.5, 0.0], 0.1, allow_boundary=True)
    fb = TestFunctionFamily(count=8, seed=2, support="vanish-on-ball-boundary", ball=ball)
    Mb = fb.matrix(g).T
    outside = ~ball.contains(g.positions)
    np.testing.assert_array_equal(Mb[:, outside], 0.0)


def test_improved_hardy_box_positive():
    v = improved_hardy_constant(Box((-1.0,) * 3, (1.0,) * 3), 2 / 17, octant=True)
    assert v.constant > 0 and v.passed


def test_plain_hardy_refinement():
    a = plain_hardy_constant(SQUARE, 1 / 32).constant
    b = plain_hardy_constant(SQUARE, 1 / 64).constant
    assert min(a, b) >= 0.95
    assert b < a


def test_strip_1d_oracle_trend():
    vals = [strip_hardy_1d(0.1, n) for n in (100, 200, 400)]
    assert all(v > 0.25 for v in vals)
    assert vals[0] > vals[1] > vals[2]
    # the 1D quotient is dilation invariant, hence delta independent
    assert strip_hardy_1d(0.05, 200) == pytest.approx(vals[1], rel=1e-10)


def test_strip_too_thin():
    with pytest.raises(ResolutionError):
        boundary_strip_hardy(BALL3, 0.02, 1 / 40)


def test_strip_delta_halved():
    # ten grid layers across the strip in both runs
    a = boundary_strip_hardy(BALL3, 0.2, 1 / 50, octant=True, inner="free").constant
    b = boundary_strip_hardy(BALL3, 0.1, 1 / 100, octant=True, inner="free").constant
    assert 0.25 <= a <= 0.45
    assert abs(b - a) / a < 0.1


def test_veps_single_branch():
    g = build_grid(BALL3, 1 / 8)
    V = veps_potential(g, 0.0)
    np.testing.assert_allclose(V, 0.25 / g.radius**2)


def test_veps_ball():
    v = veps_hardy_check(BALL3, 0.05, 2 / 25)
    assert v.count == 200
    assert v.extra["family_failures"] == 0
    assert v.constant >= 0.95
    assert v.passed


def test_veps_threshold():
    with pytest.raises(ValueError):
        veps_hardy_check(BALL3, 0.2, 1 / 8)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-9, 1.0), st.floats(1e-9, 1.0))
def test_x_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert X(lo) <= X(hi)
    assert X(1.0) == 1.0


def test_bft_unit_square_and_d_doubling():
    a = bft_hardy_constant(SQUARE, 1 / 32)
    b = bft_hardy_constant(SQUARE, 1 / 32, D=2 * SQUARE.max_distance)
    assert a.constant >= 0.9
    assert b.constant >= a.constant * (1 - 1e-10)
    with pytest.raises(ValueError):
        bft_hardy_constant(SQUARE, 1 / 32, D=0.1)


def test_hardy_moser_square():
    v = hardy_moser_check(SQUARE, 1 / 32)
    assert v.constant > 0 and v.passed
    assert v.count == 200


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 10.0))
def test_hardy_moser_homogeneity(scale):
    g = build_grid(SQUARE, 1 / 16)
    op = assemble(SQUARE, g, "H")
    u = TestFunctionFamily(count=1, seed=9).member(g, 0)

    def ratio(f):
        return (f @ (op.A @ f)) * np.sum(op.vol * f * f) ** (2 / 2) / np.sum(op.vol * np.abs(f) ** 4)

    assert ratio(scale * u) == pytest.approx(ratio(u), rel=1e-10)


def test_hardy_sobolev_cube():
    out = hardy_sobolev_checks(CUBE, 1 / 12, family=SMALL, which=("boundary-q",))
    v = out["boundary-q"]
    assert v.extra["q"] == pytest.approx(6.0)
    assert v.constant > 0 and v.passed


def test_hardy_sobolev_origin_ball():
    out = hardy_sobolev_checks(BALL3, 2 / 16, family=SMALL, which=("origin-log", "origin-weighted"))
    assert out["origin-log"].constant > 0
    assert out["origin-weighted"].constant > 0


def test_hardy_sobolev_bad_q():
    with pytest.raises(ValueError):
        hardy_sobolev_checks(CUBE, 1 / 8, family=SMALL, q=7.0, which=("boundary-q",))


def _l1_sides(g, v, alpha, delta):
    d = g.distance
    gr = np.linalg.norm(node_gradient(g, v), axis=1)
    vol = g.h**2
    lhs = vol * (np.sum(d**alpha * gr) + np.sum(np.where(d > delta, d ** (alpha - 1) * np.abs(v), 0.0)))
    rhs = (vol * np.sum(d ** (2 * alpha) * v * v)) ** 0.5
    return lhs, rhs


def test_l1_plateau_against_level_sets():
    # v = 1 on d > 0.15, linear ramp on 0.05 < d < 0.15; on the unit square
    # int f(d) dx = int_0^{1/2} f(s) 4 (1 - 2 s) ds
    def vs(s):
        return np.clip((s - 0.05) / 0.1, 0, 1)

    def level(f):
        return integrate.quad(lambda s: f(s) * 4 * (1 - 2 * s), 0, 0.5, points=[0.05, 0.1, 0.15], limit=200)[0]

    delta = 0.1
    lhs_c = level(lambda s: s * (10.0 if 0.05 < s < 0.15 else 0.0)) + level(lambda s: vs(s) if s > delta else 0.0)
    rhs_c = math.sqrt(level(lambda s: s**2 * vs(s) ** 2))
    g = build_grid(SQUARE, 1 / 256)
    lhs, rhs = _l1_sides(g, vs(g.distance), 1.0, delta)
    assert lhs == pytest.approx(lhs_c, rel=0.02)
    assert rhs == pytest.approx(rhs_c, rel=0.02)
    assert lhs / rhs > 1.0


def test_l1_family_positive():
    v = weighted_l1_check(SQUARE, 1 / 32, alpha=1.0, family=SMALL)
    assert v.constant > 0 and v.passed
    assert v.extra["delta"] == pytest.approx(0.1)


def test_log_sobolev_boundary():
    v = log_sobolev_checks(SQUARE, 1 / 24, "boundary", family=TestFunctionFamily(count=40, seed=61, nonnegative=True))
    assert np.isfinite(v.constant)
    assert v.extra["attained"]


def test_log_sobolev_eps_star():
    g = build_grid(SQUARE, 1 / 24)
    op = assemble(SQUARE, g, "H")
    u = TestFunctionFamily(count=1, seed=4, nonnegative=True).member(g, 0)
    ent, Q, n2 = entropy_forms(g, op, u, "boundary")
    kappa = 0.75
    eps = np.geomspace(1e-5, 1e2, 20001)
    f = eps * Q - kappa * np.log(eps) * n2
    assert eps[np.argmin(f)] == pytest.approx(kappa * n2 / Q, rel=1e-3)
    e2, Q2, n22 = entropy_forms(g, op, 2 * u, "boundary")
    assert e2 / n22 == pytest.approx(ent / n2, rel=1e-12)
    assert Q2 / n22 == pytest.approx(Q / n2, rel=1e-12)


def test_poincare_unit_disk_reference():
    big = Box((-1.0, -1.0), (1.0, 1.0))
    ref = jnp_zeros(1, 1)[0] ** 2  # first nonzero Neumann eigenvalue of the unit disk
    v = local_poincare_constant(big, WeightParams(), [0.0, 0.0], 0.2, 0.2 / 32)
    assert v.extra["mu_r2"] == pytest.approx(ref, rel=0.1)


def test_poincare_boundary_ball_finite():
    a = local_poincare_constant(SQUARE, WeightParams(0.0, 1.0), [0.5, 0.0], 0.1, 1 / 160)
    b = local_poincare_constant(SQUARE, WeightParams(0.0, 1.0), [0.5, 0.0], 0.1, 1 / 320)
    assert a.extra["kind"] == "boundary-adapted"
    assert np.isfinite(a.constant) and np.isfinite(b.constant)
    assert abs(b.constant - a.constant) / a.constant < 0.2


def test_poincare_small_ball():
    with pytest.raises(ResolutionError):
        local_poincare_constant(SQUARE, WeightParams(), [0.5, 0.5], 0.01, 1 / 64)


@pytest.mark.parametrize("x,w", [([0.5, 0.5], WeightParams()), ([0.5, 0.0], WeightParams(0.0, 1.0))])
def test_local_moser_finite(x, w):
    v = local_moser_check(SQUARE, w, x, 0.1, 1 / 160)
    assert np.isfinite(v.constant) and v.constant > 0


def test_local_moser_wrong_family():
    with pytest.raises(ValueError):
        local_moser_check(SQUARE, WeightParams(), [0.5, 0.5], 0.1, 1 / 160, family=SMALL)


def test_mean_value_constant_field():
    g = build_grid(SQUARE, 1 / 32)
    op = assemble(SQUARE, g, "L", {"lam": 0.0, "alpha": 1.0})
    r = 0.12
    ts = np.linspace(0, r * r, 33)[1:]
    f = Field(ts, np.full((len(ts), g.n), 2.5))
    v = mean_value_check(op, [0.5, 0.5], r, fields=[f])
    assert v.constant == pytest.approx(1.0, rel=1e-12)


def test_mean_value_random_stable():
    out = []
    for h in (1 / 32, 1 / 64):
        g = build_grid(SQUARE, h)
        op = assemble(SQUARE, g, "L", {"lam": 0.0, "alpha": 1.0})
        out.append(mean_value_check(op, [0.5, 0.05], 0.12).constant)
    assert all(np.isfinite(out))
    assert abs(out[1] - out[0]) / out[0] <= 0.2
