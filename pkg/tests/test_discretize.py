import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from hardylab.discretize import (
    AssemblyError,
    ParameterError,
    PotentialSpec,
    ResolutionError,
    TransformError,
    assemble,
    build_grid,
    ground_state_transform,
    groundstate_defect,
)
from hardylab.geometry import Ball, Box
from hardylab.spectral import principal_eigenpair

UNIT = Box((0.0,), (1.0,))
SQUARE = Box((0.0, 0.0), (1.0, 1.0))


def test_interval_nodes():
    g = build_grid(UNIT, 0.25, stagger=False)
    np.testing.assert_allclose(np.sort(g.positions[:, 0]), [0.25, 0.5, 0.75])


def test_square_nodes():
    assert build_grid(SQUARE, 0.25, stagger=False).n == 9


def test_ball_node_count():
    g = build_grid(Ball(1.0, 3), 0.1, stagger=True)
    assert abs(g.n - (4 * math.pi / 3) / 0.1**3) / ((4 * math.pi / 3) / 0.1**3) <= 0.02


def test_too_coarse():
    with pytest.raises(ResolutionError):
        build_grid(SQUARE, 0.4, stagger=False)


def test_stagger_avoids_origin_and_boundary():
    g = build_grid(Ball(1.0, 3), 0.1)
    assert np.all(np.linalg.norm(g.positions, axis=1) > 0)
    assert np.all(g.distance > 0)


def test_index_map_bijective():
    g = build_grid(Ball(1.0, 2), 0.05)
    ids = g.lookup(g.lattice)
    np.testing.assert_array_equal(ids, np.arange(g.n))


def test_1d_laplacian_spectrum():
    g = build_grid(UNIT, 0.25, stagger=False)
    op = assemble(UNIT, g, "laplacian")
    w = np.linalg.eigvalsh(op.A.toarray() / 0.25)
    assert w[0] == pytest.approx((2 / 0.25**2) * (1 - math.cos(math.pi * 0.25)), rel=1e-12)
    assert w[0] == pytest.approx(9.372583, rel=1e-6)


def test_l00_matches_laplacian():
    g = build_grid(SQUARE, 1 / 16)
    a = assemble(SQUARE, g, "laplacian")
    b = assemble(SQUARE, g, "L", {"lam": 0.0, "alpha": 0.0, "boundary": "dirichlet"})
    assert abs(a.A - b.A).max() < 1e-14
    np.testing.assert_allclose(a.m, b.m, rtol=1e-14)


def test_h_potential_on_diagonal():
    g = build_grid(SQUARE, 1 / 16)
    lap = assemble(SQUARE, g, "laplacian")
    H = assemble(SQUARE, g, "H")
    diff = (H.A - lap.A).diagonal() / H.m
    np.testing.assert_allclose(diff, -1 / (4 * g.distance**2), rtol=1e-12)
    s = principal_eigenpair(H)
    assert H.form(s.phi) > 0


@pytest.mark.parametrize(
    "family,params,dom",
    [
        ("K", {}, Ball(1.0, 3)),
        ("H", {}, SQUARE),
        ("Kc", {"c": 0.2}, Ball(1.0, 3)),
        ("Hc", {"c": 0.2}, SQUARE),
        ("L", {"lam": -1.0, "alpha": 2.0}, Ball(1.0, 3)),
    ],
)
def test_symmetry_and_positive_mass(family, params, dom):
    g = build_grid(dom, 0.125 if dom.dim == 3 else 1 / 16)
    op = assemble(dom, g, family, params)
    assert abs(op.A - op.A.T).max() == 0
    assert op.m.min() > 0


def test_inadmissible_constants():
    g = build_grid(Ball(1.0, 3), 0.125)
    with pytest.raises(ParameterError):
        assemble(Ball(1.0, 3), g, "Kc", {"c": 0.3})
    with pytest.raises(ParameterError):
        assemble(Ball(1.0, 3), g, "L", {"lam": -3.0, "alpha": 0.0})
    with pytest.raises(ParameterError):
        assemble(SQUARE, build_grid(SQUARE, 1 / 8), "K")


def test_node_on_origin_rejected():
    dom = Box((-1.0, -1.0), (1.0, 1.0))
    g = build_grid(dom, 0.25, stagger=False)
    with pytest.raises(AssemblyError):
        assemble(dom, g, "L", {"lam": -1.0, "alpha": 0.0})


def test_potential_bound_asserted():
    g = build_grid(SQUARE, 1 / 16)
    bad = PotentialSpec(v1=lambda x, d: 1.0 / d**2)
    with pytest.raises(ParameterError):
        assemble(SQUARE, g, "E", {"potential": bad})
    ok = PotentialSpec(v1=lambda x, d: 0.2 / d**2, v2=lambda x, d: np.ones(len(x)), p=np.inf)
    op = assemble(SQUARE, g, "E", {"potential": ok})
    assert abs(op.A - op.A.T).max() == 0


def test_dirichlet_energy_second_order():
    errs = []
    for h in (1 / 16, 1 / 32, 1 / 64):
        g = build_grid(SQUARE, h)
        op = assemble(SQUARE, g, "laplacian")
        x, y = g.positions.T
        u = np.sin(math.pi * x) * np.sin(math.pi * y)
        errs.append(abs(op.form(u) - math.pi**2 / 2))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.8)


def test_groundstate_constant_harmonic():
    for h in (1 / 16, 1 / 32):
        g = build_grid(SQUARE, h)
        op = assemble(SQUARE, g, "laplacian")
        s = principal_eigenpair(op)
        gt = ground_state_transform(op, s)
        assert abs(gt.form(np.ones(g.n))) <= 1e-8 * gt.m.sum()


def test_groundstate_1d_eigenvalue_zero():
    g = build_grid(UNIT, 1 / 64)
    op = assemble(UNIT, g, "laplacian")
    s = principal_eigenpair(op)
    gt = ground_state_transform(op, s)
    w = scipy.linalg.eigh(gt.A.toarray(), np.diag(gt.m), eigvals_only=True)
    assert abs(w[0]) < 1e-8


def test_groundstate_form_identity():
    g = build_grid(SQUARE, 1 / 16)
    op = assemble(SQUARE, g, "H")
    s = principal_eigenpair(op)
    gt = ground_state_transform(op, s)
    w = np.random.default_rng(0).random(g.n)
    lhs = gt.form(w)
    rhs = op.form(s.phi * w) - s.lam * np.sum(op.m * (s.phi * w) ** 2)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)


def test_groundstate_rejects_nonpositive():
    g = build_grid(SQUARE, 1 / 8)
    op = assemble(SQUARE, g, "laplacian")
    s = principal_eigenpair(op)
    s.phi = s.phi.copy()
    s.phi[0] = -1.0
    with pytest.raises(TransformError):
        ground_state_transform(op, s)


def test_flux_defect_decreases():
    out = []
    for h in (1 / 16, 1 / 32):
        g = build_grid(SQUARE, h)
        op = assemble(SQUARE, g, "H")
        out.append(groundstate_defect(op, principal_eigenpair(op))[1])
    assert out[1] < out[0]


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(-1.9, 0.0), st.integers(0, 2**31 - 1))
def test_l_family_psd_and_symmetric(alpha, lam, seed):
    dom = Ball(1.0, 2)
    g = build_grid(dom, 1 / 8)
    op = assemble(dom, g, "L", {"lam": lam, "alpha": alpha})
    assert abs(op.A - op.A.T).max() <= 1e-14 * abs(op.A).max()
    u = np.random.default_rng(seed).standard_normal(g.n)
    assert op.form(u) >= -1e-12 * np.sum(u * u) * abs(op.A).max()


def test_operator_fingerprint_stable():
    g = build_grid(SQUARE, 1 / 16)
    a = assemble(SQUARE, g, "Hc", {"c": 0.2}).fingerprint()
    b = assemble(SQUARE, build_grid(SQUARE, 1 / 16), "Hc", {"c": 0.2}).fingerprint()
    c = assemble(SQUARE, g, "Hc", {"c": 0.21}).fingerprint()
    assert a == b != c


def test_stiffness_is_sparse():
    g = build_grid(SQUARE, 1 / 16)
    assert sp.issparse(assemble(SQUARE, g, "laplacian").A)
