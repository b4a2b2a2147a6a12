import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardylab.bounds import (
    FAMILIES,
    Envelope,
    fit_constants,
    green_envelope_check,
    hc_exponent,
    kc_exponent,
    kernel_samples,
    regime_crossover,
    shape,
)
from hardylab.discretize import assemble, build_grid
from hardylab.geometry import Box
from hardylab.heat import DtPolicy, green_function, kernel_columns
from hardylab.spectral import principal_eigenpair

SQUARE = Box((0.0, 0.0), (1.0, 1.0))


def _one(a):
    return np.atleast_2d(a)


def test_bry_small_saturates():
    env = Envelope("bry-small", 2)
    S = shape(env, _one([0.3, 0.3]), _one([0.4, 0.3]), np.array([0.01]), np.array([0.3]), np.array([0.3]))
    assert S[0] == pytest.approx(0.01**-1)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(1e-3, 1.0), st.floats(1e-4, 1.0))
def test_degenerate_alpha1_identity(dx, dy, t):
    dd = dx * dy
    lhs = min(1.0, math.sqrt(dd / t))
    rhs = math.sqrt(dd) * min(t**-0.5, dd**-0.5)
    assert lhs == pytest.approx(rhs, rel=1e-12)
    a = shape(Envelope("bry-small", 2), _one([0, 0]), _one([0, 0]), np.array([t]), np.array([dx]), np.array([dy]))
    b = shape(Envelope("degenerate-L", 2, alpha_param=1.0), _one([0, 0]), _one([0, 0]), np.array([t]),
              np.array([dx]), np.array([dy]))
    assert a[0] == pytest.approx(math.sqrt(dd) * b[0], rel=1e-12)


def test_green_branch_switch_brute_force():
    env = Envelope("green", 3, alpha_param=2.0)
    rng = np.random.default_rng(0)
    for _ in range(200):
        r = rng.uniform(1e-3, 1.0)
        dx, dy = rng.uniform(1e-3, 1.0, 2)
        x = np.array([[0.0, 0.0, 0.0]])
        y = np.array([[r, 0.0, 0.0]])
        b1 = r ** (2 - 3)
        b2 = (dx * dy) * r ** (2 - 3 - 2)
        got = shape(env, x, y, np.array([1.0]), np.array([dx]), np.array([dy]))[0]
        assert got == pytest.approx(min(b1, b2), rel=1e-12)
        # near-source branch when both distances dominate |x - y|
        if dx * dy >= r * r:
            assert got == pytest.approx(r ** (2 - 3), rel=1e-12)


def test_branch_continuity_on_switching_manifold():
    # origin-small switches where ((|x|+sqrt t)(|y|+sqrt t))^{(N-2)/2} = d(x)d(y)/t
    env = Envelope("origin-small", 3)
    x, y = np.array([[0.2, 0, 0]]), np.array([[0.3, 0, 0]])
    t = 0.04
    a = ((0.2 + 0.2) * (0.3 + 0.2)) ** 0.5
    dd = a * t
    s = shape(env, x, y, np.array([t]), np.array([dd]), np.array([1.0]))[0]
    expect = a * (0.2 * 0.3) ** -0.5 * t**-1.5
    assert s == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("fam", [f for f in FAMILIES if f not in ("free",)])
def test_shape_symmetric_positive(fam):
    kw = {"c": 0.1} if fam.startswith(("kc-", "hc-")) else {}
    env = Envelope(fam, 3, alpha_param=1.5, lam_param=-1.0, lam1=2.0, **kw)
    rng = np.random.default_rng(1)
    x, y = rng.uniform(0.1, 0.9, (2, 50, 3))
    t = rng.uniform(0.01, 1.0, 50)
    dx, dy = rng.uniform(0.05, 0.5, (2, 50))
    a = shape(env, x, y, t, dx, dy)
    b = shape(env, y, x, t, dy, dx)
    assert np.all(a > 0)
    np.testing.assert_array_equal(a, b)


def test_derived_exponents_fresh():
    env = Envelope("hc-small", 2, c=3 / 16)
    assert env.alpha == pytest.approx(1.5)
    env2 = Envelope("kc-small", 3, c=0.2)
    assert env2.lam == pytest.approx(2 - 3 + math.sqrt(1 - 0.8))
    assert hc_exponent(0.25) == pytest.approx(1.0)
    assert kc_exponent(0.0, 3) == pytest.approx(0.0)


def test_large_time_needs_lam1():
    with pytest.raises(ValueError):
        shape(Envelope("bry-large", 2), _one([0.5, 0.5]), _one([0.5, 0.5]), np.array([1.0]), np.array([0.5]),
              np.array([0.5]))


def test_fit_exact_free_kernel():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (300, 1))
    y = rng.uniform(-1, 1, (300, 1))
    t = rng.uniform(0.01, 1.0, 300)
    k = (4 * math.pi * t) ** -0.5 * np.exp(-np.sum((x - y) ** 2, axis=1) / (4 * t))
    fit = fit_constants(x, y, t, k, Envelope("free", 1), np.ones(300), np.ones(300), rates=(0.25,))
    assert fit.feasible
    assert fit.envelope.C1 == pytest.approx((4 * math.pi) ** -0.5, rel=1e-12)
    assert fit.envelope.C2 == pytest.approx((4 * math.pi) ** -0.5, rel=1e-12)


def test_fit_rejects_zero_kernel():
    with pytest.raises(ValueError):
        fit_constants(_one([0.5, 0.5]), _one([0.5, 0.5]), np.array([0.1]), np.array([0.0]), Envelope("bry-small", 2),
                      np.array([0.5]), np.array([0.5]))
    with pytest.raises(ValueError):
        fit_constants(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), np.zeros(0), Envelope("bry-small", 2),
                      np.zeros(0), np.zeros(0))


@pytest.fixture(scope="module")
def h_square_kernel():
    g = build_grid(SQUARE, 1 / 24)
    op = assemble(SQUARE, g, "H")
    spec = principal_eigenpair(op)
    src = [g.nearest_node(p) for p in ((0.5, 0.5), (0.25, 0.4), (0.1, 0.7), (0.6, 0.15))]
    times = np.geomspace(4 * g.h**2, 2.0, 24)
    # fine steps: the default ramp drifts by O(lam1^3 dt^2 t) at large times
    policy = DtPolicy(times[0] / 1e4, 1.02, times[-1] / 1000)
    return g, op, spec, kernel_columns(op, src, times, policy=policy), times


def test_bry_small_fit_sound(h_square_kernel):
    g, op, spec, slices, times = h_square_kernel
    sm = kernel_samples(slices, g)
    sel = sm["t"] <= 0.05
    args = [sm[k][sel] for k in ("x", "y", "t", "k")]
    fit = fit_constants(*args, Envelope("bry-small", 2), sm["dx"][sel], sm["dy"][sel])
    assert fit.feasible and np.isfinite(fit.ratio)
    e = fit.envelope
    x, y, t, k = args
    S = shape(e, x, y, t, sm["dx"][sel], sm["dy"][sel])
    r2t = np.sum((x - y) ** 2, axis=1) / t
    assert np.all(e.C1 * S * np.exp(-e.g1 * r2t) <= k * (1 + 1e-12))
    assert np.all(k <= e.C2 * S * np.exp(-e.g2 * r2t) * (1 + 1e-12))
    assert e.g2 <= e.g1


def test_alpha1_consistency(h_square_kernel):
    g, op, spec, slices, times = h_square_kernel
    sm = kernel_samples(slices, g)
    sel = sm["t"] <= 0.05
    x, y, t, k, dx, dy = (sm[key][sel] for key in ("x", "y", "t", "k", "dx", "dy"))
    a = fit_constants(x, y, t, k, Envelope("bry-small", 2), dx, dy)
    b = fit_constants(x, y, t, k / np.sqrt(dx * dy), Envelope("degenerate-L", 2, alpha_param=1.0), dx, dy)
    assert a.feasible == b.feasible
    assert a.ratio == pytest.approx(b.ratio, rel=1e-9)


def test_crossover(h_square_kernel):
    g, op, spec, slices, times = h_square_kernel
    cr = regime_crossover(slices, spec)
    assert not cr.flagged
    assert cr.spread[-1] <= cr.spread[0]
    assert cr.decay_slope < 0


def test_crossover_single_time(h_square_kernel):
    g, op, spec, slices, times = h_square_kernel
    one = kernel_columns(op, [slices[0].source], times[-1:])
    assert regime_crossover(one, spec).flagged


def test_dirichlet_reference_fit(h_square_kernel):
    g = build_grid(SQUARE, 1 / 24)
    op = assemble(SQUARE, g, "laplacian")
    src = [g.nearest_node(p) for p in ((0.5, 0.5), (0.2, 0.3))]
    sl = kernel_columns(op, src, np.geomspace(4 * g.h**2, 0.05, 12))
    sm = kernel_samples(sl, g)
    fit = fit_constants(sm["x"], sm["y"], sm["t"], sm["k"], Envelope("dirichlet-small", 2), sm["dx"], sm["dy"])
    assert fit.feasible and np.isfinite(fit.ratio)


def test_green_envelope_hc():
    cube = Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    g = build_grid(cube, 1 / 17)
    op = assemble(cube, g, "Hc", {"c": 3 / 16})
    lam1 = principal_eigenpair(op).lam
    greens = [green_function(op, g.nearest_node(p), lam1=lam1) for p in ((0.5, 0.5, 0.5), (0.3, 0.5, 0.5))]
    env = Envelope("green", 3, alpha_param=hc_exponent(3 / 16))
    assert env.alpha == pytest.approx(1.5)
    fit = green_envelope_check(greens, env, g)
    assert fit.feasible and np.isfinite(fit.ratio)


def test_green_dimension_error():
    g = build_grid(SQUARE, 1 / 16)
    op = assemble(SQUARE, g, "laplacian")
    G = green_function(op, g.nearest_node((0.5, 0.5)))
    with pytest.raises(ValueError):
        green_envelope_check([G], Envelope("green", 2), g)
