"""Content-addressed on-disk cache of principal eigenpairs.

Each entry is a JSON record ``<fingerprint>.json`` holding the scalar data,
the vector length and a SHA-256 checksum, next to a raw little-endian
float64 file ``<fingerprint>.phi``.  Writes go through a temporary file and
an atomic rename, so concurrent writers resolve as last-writer-wins.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .spectral import SpectralData, principal_eigenpair

__all__ = ["CacheError", "SpectralCache", "default_cache_dir", "cached_eigenpair"]

ENV_VAR = "HARDYLAB_CACHE_DIR"
_DTYPE = np.dtype("<f8")


class CacheError(OSError):
    """IO failure while reading or writing a cache entry."""


def default_cache_dir():
    env = os.environ.get(ENV_VAR)
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "hardylab"


def _atomic_write(path, data):
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise CacheError(f"cannot write cache file {path}: {exc}") from exc


class SpectralCache:
    """Eigenpair store keyed by operator fingerprints."""

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else default_cache_dir()

    def _paths(self, fingerprint):
        return self.directory / f"{fingerprint}.json", self.directory / f"{fingerprint}.phi"

    def lookup(self, fingerprint):
        """Cached :class:`SpectralData` or ``None`` on a miss or a corrupted entry."""
        rec_path, phi_path = self._paths(fingerprint)
        if not rec_path.exists() or not phi_path.exists():
            return None
        try:
            rec = json.loads(rec_path.read_text())
            raw = phi_path.read_bytes()
        except (OSError, ValueError):
            return None
        if rec.get("fingerprint") != fingerprint:
            return None
        if len(raw) != rec.get("n", -1) * _DTYPE.itemsize:
            return None
        if hashlib.sha256(raw).hexdigest() != rec.get("sha256"):
            return None
        phi = np.frombuffer(raw, dtype=_DTYPE).astype(float)
        return SpectralData(
            lam=float(rec["lam"]),
            phi=phi,
            residual=float(rec["residual"]),
            iterations=int(rec["iterations"]),
            seed=int(rec["seed"]),
            method=rec["method"],
            shift=float(rec["shift"]),
            fingerprint=fingerprint,
        )

    def store(self, data):
        if not data.fingerprint:
            raise ValueError("spectral data carries no fingerprint")
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CacheError(f"cannot create cache directory {self.directory}: {exc}") from exc
        rec_path, phi_path = self._paths(data.fingerprint)
        raw = np.ascontiguousarray(data.phi, dtype=_DTYPE).tobytes()
        rec = {
            "fingerprint": data.fingerprint,
            "lam": repr(float(data.lam)),
            "residual": repr(float(data.residual)),
            "iterations": int(data.iterations),
            "seed": int(data.seed),
            "method": data.method,
            "shift": repr(float(data.shift)),
            "n": len(data.phi),
            "sha256": hashlib.sha256(raw).hexdigest(),
        }
        _atomic_write(phi_path, raw)
        _atomic_write(rec_path, json.dumps(rec, sort_keys=True).encode())


def cached_eigenpair(op, cache=None, **kw):
    """:func:`principal_eigenpair` through ``cache``; returns ``(data, hit)``."""
    if cache is None:
        return principal_eigenpair(op, **kw), False
    fp = op.fingerprint()
    hit = cache.lookup(fp)
    if hit is not None and len(hit.phi) == op.n:
        hit.grid = op.grid
        return hit, True
    data = principal_eigenpair(op, **kw)
    cache.store(data)
    return data, False
