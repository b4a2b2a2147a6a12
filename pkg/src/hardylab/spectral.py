"""Principal eigenpairs, generalized Rayleigh-quotient minima and envelope fits.

All pencils ``(A, B)`` have a symmetric ``A`` with nonpositive off-diagonal
entries and a positive diagonal ``B``.  For such pencils a strictly
positive eigenvector belongs to the smallest eigenvalue (Perron), which is
how every sparse solve below certifies that it found the ground state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretize import WeightedOperator

__all__ = [
    "SolverError",
    "FormError",
    "PositivityError",
    "SpectralData",
    "QuotientResult",
    "EnvelopeFit",
    "principal_eigenpair",
    "generalized_min_quotient",
    "envelope_fit",
    "psd_defect",
    "rayleigh",
]

DENSE_MAX = 1500


class SolverError(RuntimeError):
    """An eigensolver did not reach the requested residual."""


class FormError(ValueError):
    """The denominator form is not positive definite."""


class PositivityError(RuntimeError):
    """The computed ground state is not strictly positive."""


@dataclass(eq=False)
class SpectralData:
    """Principal eigenpair with ``sum m phi^2 = 1`` and ``phi > 0``.

    ``residual`` is ``||A phi - lam m phi|| / ||m phi||``.
    """

    lam: float
    phi: np.ndarray
    residual: float
    iterations: int
    seed: int
    method: str
    shift: float = 0.0
    fingerprint: str = ""
    grid: object = field(default=None, repr=False)


@dataclass(eq=False)
class QuotientResult:
    mu: float
    vector: np.ndarray
    residual: float
    constraint: str = "none"


@dataclass(frozen=True)
class EnvelopeFit:
    c1: float
    c2: float
    argmin: tuple
    argmax: tuple
    count: int

    @property
    def ratio(self):
        return self.c2 / self.c1


def _as_sparse(A):
    if isinstance(A, WeightedOperator):
        return A.A
    if sp.issparse(A):
        return A.tocsr()
    return sp.csr_matrix(np.asarray(A, float))


def _as_diag(B, n):
    """Return the diagonal of ``B`` if it is diagonal, else ``None``."""
    if isinstance(B, WeightedOperator):
        return B.m
    if np.ndim(B) == 1:
        return np.asarray(B, float)
    Bs = B if sp.issparse(B) else sp.csr_matrix(np.asarray(B, float))
    dg = Bs.diagonal()
    if (Bs - sp.diags(dg)).count_nonzero() == 0:
        return np.asarray(dg, float)
    return None


def rayleigh(A, B, u):
    """``u^T A u / u^T B u``."""
    A = _as_sparse(A)
    u = np.asarray(u, float)
    bd = _as_diag(B, len(u))
    den = np.sum(bd * u * u) if bd is not None else float(u @ (_as_sparse(B) @ u))
    return float(u @ (A @ u)) / den


def _gershgorin_lower(A, bdiag):
    A = A.tocsr()
    dg = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(dg)
    return float(np.min((dg - off) / bdiag))


def _scale(A, bdiag):
    return float(np.max(np.abs(A.diagonal()) / bdiag))


def _residual(A, Bv, lam, v):
    return float(np.linalg.norm(A @ v - lam * Bv) / np.linalg.norm(Bv))


def _dense_lowest(A, bdiag, k=1):
    s = 1.0 / np.sqrt(bdiag)
    Ad = A.toarray() * s[:, None] * s[None, :]
    w, U = sl.eigh(0.5 * (Ad + Ad.T), subset_by_index=[0, k - 1])
    return w, U * s[:, None]


def _inverse_refine(A, bdiag, lu, sigma, v, tol, maxiter):
    """Shifted inverse iteration from ``v`` until the residual is below ``tol``."""
    lam = rayleigh(A, bdiag, v)
    res = _residual(A, bdiag * v, lam, v)
    it = 0
    while res > tol and it < maxiter:
        v = lu.solve(bdiag * v)
        v /= np.sqrt(np.sum(bdiag * v * v))
        lam = rayleigh(A, bdiag, v)
        res = _residual(A, bdiag * v, lam, v)
        it += 1
    return lam, v, res, it


def _factor(A, bdiag, sigma):
    return spla.splu((A - sigma * sp.diags(bdiag)).tocsc())


def _lowest_pair(A, bdiag, tol, seed, method, maxiter):
    """Smallest eigenpair of the pencil ``(A, diag(bdiag))`` with Perron check."""
    n = A.shape[0]
    if method == "auto":
        method = "dense" if n <= DENSE_MAX else "lanczos"
    if method == "dense":
        w, U = _dense_lowest(A, bdiag)
        v = U[:, 0]
        v = v / np.sqrt(np.sum(bdiag * v * v))
        lam = float(w[0])
        return lam, v, _residual(A, bdiag * v, lam, v), 1, 0.0, "dense"
    scale = _scale(A, bdiag)
    shifts = [-1e-8 * scale, _gershgorin_lower(A, bdiag) - 1e-3 * scale]
    rng = np.random.default_rng(seed)
    v0 = np.abs(rng.standard_normal(n)) + 1.0
    last = None
    for sigma in shifts:
        try:
            lu = _factor(A, bdiag, sigma)
        except RuntimeError as exc:
            last = exc
            continue
        if method == "lanczos":
            op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
            try:
                w, U = spla.eigsh(
                    A, k=1, M=sp.diags(bdiag).tocsr(), sigma=sigma, which="LM", OPinv=op, v0=v0, tol=1e-13
                )
            except spla.ArpackError as exc:
                last = exc
                continue
            v = U[:, 0]
            v = v / np.sqrt(np.sum(bdiag * v * v))
            its = 0
        else:
            v = v0 / np.sqrt(np.sum(bdiag * v0 * v0))
            its = 0
        lam, v, res, more = _inverse_refine(A, bdiag, lu, sigma, v, tol, maxiter)
        its += more
        if v.sum() < 0:
            v = -v
        if res <= tol and np.all(v > 0):
            return lam, v, res, its, sigma, method
        last = SolverError(f"shift {sigma:g}: residual {res:.3e}, min entry {v.min():.3e}")
    raise SolverError(f"ground state not certified after shift schedule: {last}")


def principal_eigenpair(op, tol=1e-8, method="auto", seed=0, maxiter=2000):
    """Smallest eigenvalue of ``A u = lam m u`` with a positive eigenvector.

    Parameters
    ----------
    op : WeightedOperator
    tol : float
        Bound on ``||A phi - lam m phi|| / ||m phi||``.
    method : {"auto", "dense", "lanczos", "inverse"}
        ``dense`` uses a full symmetric eigendecomposition (small grids),
        ``lanczos`` shift-invert Lanczos refined by inverse iteration,
        ``inverse`` plain shifted inverse iteration from a fixed-seed start.
    """
    lam, v, res, its, sigma, used = _lowest_pair(op.A, op.m, tol, seed, method, maxiter)
    if v.sum() < 0:
        v = -v
    if res > tol:
        raise SolverError(f"residual {res:.3e} above tolerance {tol:.1e} ({used})")
    if not np.all(v > 0):
        raise PositivityError(f"eigenvector has {int(np.sum(v <= 0))} non-positive entries")
    return SpectralData(
        lam=float(lam),
        phi=v,
        residual=res,
        iterations=its,
        seed=seed,
        method=used,
        shift=float(sigma),
        fingerprint=op.fingerprint(),
        grid=op.grid,
    )


def psd_defect(op, **kw):
    """Smallest Rayleigh quotient of ``A`` over ``m`` (negative part only)."""
    return min(0.0, principal_eigenpair(op, **kw).lam)


def _check_denominator(B, bdiag, n):
    if bdiag is not None:
        if np.any(bdiag <= 0):
            raise FormError("denominator has non-positive diagonal entries")
        return
    Bs = _as_sparse(B)
    if np.any(Bs.diagonal() <= 0):
        raise FormError("denominator has non-positive diagonal entries")
    if n <= 3000:
        wmin = sl.eigvalsh(Bs.toarray(), subset_by_index=[0, 0])[0]
        if wmin <= 0:
            raise FormError("denominator form is indefinite")


def generalized_min_quotient(A, B, constraint="none", tol=1e-9, seed=0, method="auto"):
    """``mu = inf u^T A u / u^T B u``.

    Parameters
    ----------
    A : sparse matrix or WeightedOperator
        Numerator form.
    B : 1-d array, sparse matrix or WeightedOperator
        Denominator form; a vector is read as a diagonal.
    constraint : {"none", "mean-zero"}
        ``mean-zero`` restricts to ``sum B_ii u_i = 0`` (requires a diagonal B).
    """
    A = _as_sparse(A)
    n = A.shape[0]
    bdiag = _as_diag(B, n)
    _check_denominator(B, bdiag, n)
    if constraint == "none":
        if bdiag is None:
            Bs = _as_sparse(B)
            w, U = sl.eigh(A.toarray(), Bs.toarray(), subset_by_index=[0, 0])
            v = U[:, 0]
            res = float(np.linalg.norm(A @ v - w[0] * (Bs @ v)) / np.linalg.norm(Bs @ v))
            return QuotientResult(float(w[0]), v, res, "none")
        offdiag_ok = (A - sp.diags(A.diagonal())).max() <= 0 if A.nnz else True
        if offdiag_ok:
            lam, v, res, _, _, _ = _lowest_pair(A, bdiag, tol, seed, method, 4000)
        else:
            w, U = _dense_lowest(A, bdiag)
            v = U[:, 0]
            lam = float(w[0])
            res = _residual(A, bdiag * v, lam, v)
        if v.sum() < 0:
            v = -v
        return QuotientResult(float(lam), v, res, "none")
    if constraint != "mean-zero":
        raise ValueError(f"unknown constraint {constraint!r}")
    if bdiag is None:
        raise FormError("mean-zero constraint needs a diagonal denominator")
    if n < 2:
        raise FormError("mean-zero space is trivial")
    if n <= 3000:
        Z = sl.null_space(bdiag[None, :])
        Ad = A.toarray()
        Az = Z.T @ Ad @ Z
        Bz = (Z * bdiag[:, None]).T @ Z
        w, U = sl.eigh(0.5 * (Az + Az.T), 0.5 * (Bz + Bz.T), subset_by_index=[0, 0])
        v = Z @ U[:, 0]
        mu = float(w[0])
    else:
        scale = _scale(A, bdiag)
        sigma = -1e-6 * scale
        lu = _factor(A, bdiag, sigma)
        op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
        rng = np.random.default_rng(seed)
        w, U = spla.eigsh(
            A, k=3, M=sp.diags(bdiag).tocsr(), sigma=sigma, which="LM", OPinv=op, v0=rng.standard_normal(n)
        )
        order = np.argsort(w)
        w, U = w[order], U[:, order]
        ones = np.ones(n) / np.sqrt(bdiag.sum())
        overlap = np.abs(U.T @ (bdiag * ones)) / np.sqrt(np.sum(bdiag[:, None] * U * U, axis=0))
        pick = int(np.argmin(np.where(overlap < 0.5, w, np.inf)))
        v = U[:, pick]
        v = v - np.sum(bdiag * v) / bdiag.sum()
        mu = rayleigh(A, bdiag, v)
    # residual measured on the constrained space
    r = A @ v - mu * bdiag * v
    r = r - bdiag * (np.sum(r) / bdiag.sum())
    res = float(np.linalg.norm(r) / np.linalg.norm(bdiag * v))
    return QuotientResult(mu, v, res, "mean-zero")


def envelope_fit(spec, shape, guard=2.0, grid=None, origin_guard=True):
    """Two-sided constants ``c1 <= phi / s <= c2`` over guarded nodes.

    Parameters
    ----------
    spec : SpectralData
    shape : callable or ndarray
        ``s(positions)`` or its node values.
    guard : float
        Nodes with ``d < guard h`` (and ``|x| < guard h`` when
        ``origin_guard``) are excluded.
    """
    grid = grid if grid is not None else spec.grid
    pos = grid.positions
    s = np.asarray(shape(pos) if callable(shape) else shape, float)
    mask = grid.distance >= guard * grid.h
    if origin_guard:
        mask &= grid.radius >= guard * grid.h
    if not np.any(mask):
        raise ValueError("guarded node set is empty")
    if np.any(s[mask] <= 0):
        raise ValueError("shape must be positive on guarded nodes")
    ratio = spec.phi[mask] / s[mask]
    idx = np.flatnonzero(mask)
    i0, i1 = int(np.argmin(ratio)), int(np.argmax(ratio))
    return EnvelopeFit(
        c1=float(ratio[i0]),
        c2=float(ratio[i1]),
        argmin=tuple(pos[idx[i0]]),
        argmax=tuple(pos[idx[i1]]),
        count=int(mask.sum()),
    )
