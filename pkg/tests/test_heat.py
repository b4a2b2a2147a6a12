import math

import numpy as np
import pytest

from hardylab.discretize import assemble, build_grid, ground_state_transform
from hardylab.geometry import Box
from hardylab.heat import (
    DenseOracle,
    DtPolicy,
    NotInvertibleError,
    OracleSizeError,
    TimeTooSmallError,
    ThetaStepper,
    evolve,
    green_function,
    kernel_column,
    kernel_columns,
)
from hardylab.spectral import principal_eigenpair

UNIT = Box((0.0,), (1.0,))
SQUARE = Box((0.0, 0.0), (1.0, 1.0))
CUBE = Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))


def _square_h(h=1 / 16):
    g = build_grid(SQUARE, h)
    return g, assemble(SQUARE, g, "H")


def test_eigenvector_evolution():
    g, op = _square_h()
    s = principal_eigenpair(op)
    u = evolve(op, s.phi, 0.1, policy=DtPolicy(1e-5, 1.05, 1e-3))
    np.testing.assert_allclose(u, math.exp(-s.lam * 0.1) * s.phi, rtol=1e-3)


def test_free_space_gaussian():
    dom = Box((-2.0, -2.0), (2.0, 2.0))
    g = build_grid(dom, 1 / 32)
    op = assemble(dom, g, "laplacian")
    s0, t = 0.01, 0.02
    r2 = np.sum(g.positions**2, axis=1)
    u0 = np.exp(-r2 / (4 * s0)) / (4 * math.pi * s0)
    u = evolve(op, u0, t, policy=DtPolicy(1e-5, 1.1, 5e-4))
    exact = np.exp(-r2 / (4 * (s0 + t))) / (4 * math.pi * (s0 + t))
    assert np.max(np.abs(u - exact)) / exact.max() <= 0.01


def test_theta_schemes_consistent():
    g, op = _square_h()
    s = principal_eigenpair(op)
    u0 = np.random.default_rng(0).random(g.n)
    diffs = []
    for dt in (2e-3, 1e-3):
        pol = DtPolicy(dt, 1.0, dt, startup=0)
        a = ThetaStepper(op, 0.5).run(u0, [0.1], pol)[0]
        b = ThetaStepper(op, 1.0).run(u0, [0.1], pol)[0]
        diffs.append(np.sqrt(np.sum(op.m * (a - b) ** 2)))
    # implicit Euler error is first order, so halving dt halves the gap
    assert diffs[1] / diffs[0] == pytest.approx(0.5, abs=0.1)
    assert s.lam > 0


def test_oracle_spectral_sum_1d():
    g = build_grid(UNIT, 1 / 64, stagger=False)
    op = assemble(UNIT, g, "laplacian")
    K = DenseOracle(op).kernel(0.05)
    x = g.positions[:, 0]
    k = np.arange(1, 400)
    ref = (2 * np.sin(np.pi * k[None, :] * x[:, None]) * np.exp(-(k**2) * np.pi**2 * 0.05)) @ (
        np.sin(np.pi * k[:, None] * x[None, :])
    )
    i, j = np.meshgrid(np.arange(g.n), np.arange(g.n), indexing="ij")
    big = ref > 1e-3 * ref.max()
    assert np.max(np.abs(K[big] - ref[big]) / ref[big]) <= 0.01
    np.testing.assert_array_equal(K, K.T)


def test_oracle_identity_limit():
    g, op = _square_h(1 / 8)
    o = DenseOracle(op)
    dev = []
    for t in (1e-8, 1e-9, 1e-10):
        KM = o.kernel(t) * op.m[None, :]
        dev.append(np.max(np.abs(KM - np.eye(g.n))))
        # first-order bound |e^{-tB} - I| <= t |B| with B = M^{-1} A
        assert dev[-1] <= 1.01 * t * o.w.max() + 1e-12
    assert dev[-1] <= 1e-6
    assert dev[0] > dev[1] > dev[2]


def test_oracle_size_limit():
    g = build_grid(SQUARE, 1 / 64)
    with pytest.raises(OracleSizeError):
        DenseOracle(assemble(SQUARE, g, "laplacian"))


def test_kernel_column_matches_oracle():
    g = build_grid(UNIT, 1 / 64)
    op = assemble(UNIT, g, "laplacian")
    times = np.array([0.01, 0.05, 0.2])
    y = g.nearest_node([0.3])
    sl = kernel_column(op, y, times, policy=DtPolicy(times[0] / 1e4, 1.02, times[-1] / 1000))
    o = DenseOracle(op)
    for j, t in enumerate(times):
        ex = o.column(t, y)
        assert np.max(np.abs(sl.values[j] - ex)) / np.max(ex) <= 1e-3


def test_kernel_symmetry_and_positivity():
    g, op = _square_h()
    times = np.array([0.02, 0.05, 0.1])
    src = [g.nearest_node(p) for p in ((0.3, 0.4), (0.6, 0.5), (0.5, 0.2))]
    slices = kernel_columns(op, src, times)
    for a in slices:
        assert a.values.min() >= -1e-10 * a.values.max()
        for b in slices:
            kab = a.values[:, b.source]
            kba = b.values[:, a.source]
            np.testing.assert_allclose(kab, kba, rtol=1e-2)


def test_mass_monotone_zero_potential():
    g = build_grid(SQUARE, 1 / 16)
    op = assemble(SQUARE, g, "laplacian")
    sl = kernel_column(op, g.nearest_node((0.5, 0.5)), np.geomspace(0.02, 1.0, 12))
    assert np.all(np.diff(sl.mass) <= 1e-12)


def test_time_floor():
    g, op = _square_h()
    with pytest.raises(TimeTooSmallError):
        kernel_column(op, 0, [g.h**2])


def test_semigroup_property():
    g, op = _square_h(1 / 12)
    o = DenseOracle(op)
    y = g.nearest_node((0.4, 0.4))
    ks = o.column(0.03, y)
    stepped = evolve(op, ks, 0.05, policy=DtPolicy(1e-6, 1.02, 1e-4))
    ref = o.column(0.08, y)
    assert np.max(np.abs(stepped - ref)) / ref.max() <= 1e-3


def test_ground_state_factorization():
    g, op = _square_h(1 / 12)
    s = principal_eigenpair(op)
    gt = ground_state_transform(op, s)
    K = DenseOracle(op).kernel(0.05)
    Kt = DenseOracle(gt).kernel(0.05)
    fact = s.phi[:, None] * s.phi[None, :] * Kt * math.exp(-s.lam * 0.05)
    assert np.max(np.abs(K - fact)) / np.max(np.abs(K)) <= 1e-2


def test_weighted_contraction():
    g, op = _square_h(1 / 12)
    s = principal_eigenpair(op)
    gt = ground_state_transform(op, s)
    u = np.random.default_rng(1).random(g.n)
    vals = ThetaStepper(gt, 0.5).run(u, [0.01, 0.02, 0.05, 0.1], DtPolicy(1e-4, 1.1, 1e-3))
    norms = [np.sum(gt.m * v**2) for v in vals]
    assert np.all(np.diff(norms) <= 1e-12)


def test_green_1d_analytic():
    g = build_grid(UNIT, 1 / 64, stagger=False)
    op = assemble(UNIT, g, "laplacian")
    G = green_function(op, g.nearest_node([0.5]))
    assert G.g[g.nearest_node([0.25])] == pytest.approx(0.125, rel=1e-10)
    x = g.positions[:, 0]
    np.testing.assert_allclose(G.g, np.minimum(x, 1 - x) * 0.5, rtol=1e-9)
    assert G.residual <= 1e-10


def test_green_3d_free_space():
    # near the source the Dirichlet Green function is 1/(4 pi r) minus a
    # smooth regular part, which is nearly constant on the annulus
    h = 1 / 33
    g = build_grid(CUBE, h)
    op = assemble(CUBE, g, "laplacian")
    y = g.nearest_node((0.5, 0.5, 0.5))
    G = green_function(op, y)
    r = np.linalg.norm(g.positions - g.positions[y], axis=1)
    ann = (r >= 5 * h) & (r <= 10 * h)
    R = np.mean(1 / (4 * math.pi * r[ann]) - G.g[ann])
    assert R > 0
    np.testing.assert_allclose(4 * math.pi * r[ann] * (G.g[ann] + R), 1.0, atol=0.1)


def test_green_against_time_integral():
    g = build_grid(SQUARE, 1 / 16)
    op = assemble(SQUARE, g, "Hc", {"c": 3 / 16})
    y = g.nearest_node((0.4, 0.6))
    G = green_function(op, y)
    ref = DenseOracle(op).time_integrated_green(y)
    assert np.max(np.abs(G.g - ref)) / np.max(ref) <= 0.02


def test_green_nonnegative():
    g, op = _square_h()
    G = green_function(op, g.nearest_node((0.5, 0.5)))
    assert G.g.min() >= -1e-10 * G.g.max()


def test_green_not_invertible():
    g, op = _square_h()
    with pytest.raises(NotInvertibleError):
        green_function(op, 0, lam1=-1.0)
