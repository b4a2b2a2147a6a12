import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from hardylab.discretize import assemble, build_grid
from hardylab.geometry import Box
from hardylab.harnack import (
    Field,
    GeometryError,
    ModeError,
    counterexample_profile,
    counterexample_residual,
    generate_positive_solution,
    harnack_positions,
    harnack_quotient,
    harnack_sweep,
    make_cylinder,
    weak_degenerate_counterexample,
)
from hardylab.spectral import principal_eigenpair

SQUARE = Box((0.0, 0.0), (1.0, 1.0))


def _cyl_times(cyl):
    return np.unique(np.concatenate([cyl.early, cyl.late]))


def test_cylinder_windows():
    c = make_cylinder(SQUARE, [0.5, 0.5], 0.2)
    assert c.early.max() < c.late.min()
    assert c.base.radius == pytest.approx(0.1)
    assert len(c.early) == len(c.late) == 8


def test_constant_field_quotient_one():
    g = build_grid(SQUARE, 1 / 32)
    c = make_cylinder(SQUARE, [0.5, 0.5], 0.2)
    ts = _cyl_times(c)
    f = Field(ts, np.full((len(ts), g.n), 3.7))
    assert harnack_quotient(f, c, g) == 1.0


def test_separable_field_factorizes():
    g = build_grid(SQUARE, 1 / 32)
    op = assemble(SQUARE, g, "L", {"lam": 0.0, "alpha": 1.0})
    s = principal_eigenpair(op)
    c = make_cylinder(SQUARE, [0.5, 0.5], 0.2)
    ts = _cyl_times(c)
    f = Field(ts, np.exp(-s.lam * ts)[:, None] * s.phi[None, :])
    nodes = np.flatnonzero(c.base.contains(g.positions))
    expect = s.phi[nodes].max() / s.phi[nodes].min() * math.exp(s.lam * (c.late.max() - c.early.min()))
    assert harnack_quotient(f, c, g) == pytest.approx(expect, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-6, 1e6))
def test_quotient_scale_invariant(scale):
    g = build_grid(SQUARE, 1 / 16)
    c = make_cylinder(SQUARE, [0.3, 0.05], 0.2)
    ts = _cyl_times(c)
    vals = np.random.default_rng(0).uniform(0.5, 2.0, (len(ts), g.n))
    f1, f2 = Field(ts, vals), Field(ts, scale * vals)
    assert harnack_quotient(f2, c, g) == pytest.approx(harnack_quotient(f1, c, g), rel=1e-12)


def test_empty_base():
    g = build_grid(SQUARE, 1 / 4, stagger=False)
    c = make_cylinder(SQUARE, [0.1, 0.1], 0.02)
    ts = _cyl_times(c)
    with pytest.raises(GeometryError):
        harnack_quotient(Field(ts, np.ones((len(ts), g.n))), c, g)


def test_unit_data_maximum_principle():
    g = build_grid(SQUARE, 1 / 16)
    op = assemble(SQUARE, g, "laplacian")
    f = generate_positive_solution(op, 0, [0.01, 0.05], u0=np.ones(g.n))
    assert f.values.max() <= 1 + 1e-12
    assert f.values.min() > 0


def test_two_seeds_differ():
    g = build_grid(SQUARE, 1 / 16)
    op = assemble(SQUARE, g, "L", {"lam": 0.0, "alpha": 1.0})
    a, b = generate_positive_solution(op, [1, 2], [0.01, 0.02])
    assert a.values.min() > 0 and b.values.min() > 0
    assert not np.allclose(a.values, b.values)


def test_certify_rejects_small_alpha():
    g = build_grid(SQUARE, 1 / 16)
    op = assemble(SQUARE, g, "L", {"lam": 0.0, "alpha": 0.5})
    with pytest.raises(ModeError):
        harnack_sweep(op, [[0.5, 0.5]], [0.2], [0])


def test_positions_include_boundary():
    pos = harnack_positions(SQUARE, 20, 10, seed=0)
    d = SQUARE.signed_distance(pos)
    assert len(pos) == 20
    assert np.sum(d < 1e-12) >= 10


@pytest.mark.parametrize("alpha", [1.0, 2.0])
def test_sweep_stable_under_refinement(alpha):
    pos = harnack_positions(SQUARE, 8, 4, seed=0)
    radii = (0.12, 0.18, 0.24)
    out = []
    for h in (1 / 24, 1 / 48):
        g = build_grid(SQUARE, h)
        op = assemble(SQUARE, g, "L", {"lam": 0.0, "alpha": alpha})
        out.append(harnack_sweep(op, pos, radii, seeds=range(3)).max_quotient)
    assert all(np.isfinite(out))
    assert abs(out[1] - out[0]) / out[0] <= 0.2


def test_classical_interior():
    g = build_grid(SQUARE, 1 / 32)
    op = assemble(SQUARE, g, "L", {"lam": 0.0, "alpha": 0.0})
    rep = harnack_sweep(op, [[0.5, 0.5], [0.4, 0.6]], [0.2], seeds=[0, 1], mode="classical")
    assert np.isfinite(rep.max_quotient) and rep.max_quotient > 0
    assert len(rep.rows()) == 4


def test_profile_endpoint_and_monotone():
    assert counterexample_profile(1.0, 0.5, 2)[0] == 0.0
    rho = np.linspace(0.5, 0.999, 60)
    v = counterexample_profile(rho, 0.5, 2)
    assert np.all(v > 0)
    assert np.all(np.diff(v) < 0)


@pytest.mark.parametrize("rho,alpha,N", [(0.5, 0.5, 2), (0.8, 0.3, 3), (0.95, 0.7, 2)])
def test_profile_against_weighted_quadrature(rho, alpha, N):
    # independent route: quad's algebraic end-point weight (1-s)^{-alpha}
    ref, _ = integrate.quad(lambda s: s ** (1 - N), rho, 1.0, weight="alg", wvar=(0.0, -alpha))
    assert counterexample_profile(rho, alpha, N)[0] == pytest.approx(ref, rel=1e-9)


def test_profile_rejects_alpha():
    with pytest.raises(ValueError):
        counterexample_profile(0.5, 1.0, 2)


def test_counterexample_residual_decreases():
    r = [counterexample_residual(0.5, 2, h) for h in (1 / 32, 1 / 64)]
    assert r[1] < r[0]


def test_counterexample_refinement_blowup():
    rep = weak_degenerate_counterexample(0.5, 2)
    q = list(rep.refinement.values())
    assert rep.v_at_one == 0.0
    assert q[0] < q[1] < q[2]
