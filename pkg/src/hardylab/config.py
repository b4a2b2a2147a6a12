"""JSON run configurations: parsing, validation and fingerprints."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ConfigError", "RunConfig", "load_config", "COMMANDS", "canonical_json"]

COMMANDS = ("eig", "kernel", "green", "harnack", "hardy", "poincare", "moser", "volume", "logsob", "certify")
DOMAIN_KINDS = ("ball", "box", "polygon", "convex-polygon", "ellipse")
FAMILIES = ("laplacian", "K", "H", "Kc", "Hc", "L", "E")
HARDY_KINDS = ("improved", "strip", "plain", "veps", "log-remainder", "hardy-moser", "hardy-sobolev")


class ConfigError(ValueError):
    """Unreadable or inadmissible configuration."""


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _num(block, key, where, default=None, positive=False, required=False):
    if key not in block:
        if required:
            raise ConfigError(f"{where}.{key} is required")
        return default
    v = block[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key} must be a finite number")
    if positive and v <= 0:
        raise ConfigError(f"{where}.{key} must be positive")
    return float(v)


@dataclass
class RunConfig:
    """Validated configuration.

    Blocks: ``domain`` (kind and sizes), ``grid`` (h, stagger, octant,
    clearance), ``operator`` (family, c, lam, alpha, potential), ``task``
    (command-specific parameters) and ``output`` (directory, formats).
    """

    domain: dict
    grid: dict = field(default_factory=dict)
    operator: dict = field(default_factory=lambda: {"family": "laplacian"})
    task: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    command: str | None = None

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(raw) - {"domain", "grid", "operator", "task", "output", "command"}
        if unknown:
            raise ConfigError(f"unknown configuration blocks {sorted(unknown)}")
        cfg = cls(
            domain=dict(raw.get("domain") or {}),
            grid=dict(raw.get("grid") or {}),
            operator=dict(raw.get("operator") or {"family": "laplacian"}),
            task=dict(raw.get("task") or {}),
            output=dict(raw.get("output") or {}),
            command=raw.get("command"),
        )
        cfg.validate()
        return cfg

    def as_dict(self):
        return {
            "command": self.command,
            "domain": self.domain,
            "grid": self.grid,
            "operator": self.operator,
            "task": self.task,
            "output": self.output,
        }

    def fingerprint(self):
        """Stable hash of the canonical configuration (output block excluded)."""
        data = self.as_dict()
        data.pop("output")
        return hashlib.sha256(canonical_json(data).encode()).hexdigest()[:16]

    # -- validation -----------------------------------------------------------
    def validate(self):
        if self.command is not None and self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        self._validate_domain()
        self._validate_grid()
        self._validate_operator()
        self._validate_task()
        out = self.output
        if "directory" in out and not isinstance(out["directory"], str):
            raise ConfigError("output.directory must be a string")

    def _validate_domain(self):
        d = self.domain
        if self.command == "certify" and not d:
            return
        kind = d.get("kind")
        if kind not in DOMAIN_KINDS:
            raise ConfigError(f"domain.kind must be one of {DOMAIN_KINDS}")
        if kind == "ball":
            _num(d, "radius", "domain", positive=True)
            dim = d.get("dim", 3)
            if not isinstance(dim, int) or dim < 1:
                raise ConfigError("domain.dim must be a positive integer")
        elif kind == "box":
            if "sides" in d:
                s = d["sides"]
                if not isinstance(s, list) or not s or any(
                    isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0 for v in s
                ):
                    raise ConfigError("domain.sides must be a list of positive numbers")
            elif "lower" in d or "upper" in d:
                lo, hi = d.get("lower"), d.get("upper")
                if not (isinstance(lo, list) and isinstance(hi, list) and len(lo) == len(hi) and lo):
                    raise ConfigError("domain.lower/upper must be lists of equal length")
                if any(b <= a for a, b in zip(lo, hi)):
                    raise ConfigError("domain.upper must exceed domain.lower")
        elif kind in ("polygon", "convex-polygon"):
            v = d.get("vertices")
            if not isinstance(v, list) or len(v) < 3 or any(not isinstance(p, list) or len(p) != 2 for p in v):
                raise ConfigError("domain.vertices must list at least three 2D points")
        elif kind == "ellipse":
            _num(d, "a", "domain", positive=True, required=True)
            _num(d, "b", "domain", positive=True, required=True)

    def _validate_grid(self):
        if self.command == "certify" and not self.grid:
            return
        g = self.grid
        if g.get("h") is None and (
            self.command == "volume" or (self.command == "harnack" and self.task.get("mode") == "counterexample")
        ):
            return
        _num(g, "h", "grid", positive=True, required=True)
        for key in ("stagger", "octant"):
            if key in g and not isinstance(g[key], bool):
                raise ConfigError(f"grid.{key} must be a boolean")
        c = _num(g, "clearance", "grid", default=0.0)
        if c is not None and not 0 <= c < 1:
            raise ConfigError("grid.clearance must lie in [0, 1)")

    def _validate_operator(self):
        op = self.operator
        fam = op.get("family", "laplacian")
        if fam not in FAMILIES:
            raise ConfigError(f"operator.family must be one of {FAMILIES}")
        if fam in ("Kc", "Hc"):
            c = _num(op, "c", "operator", required=True, positive=True)
            if fam == "Hc" and c > 0.25:
                raise ConfigError("operator.c must not exceed 1/4 for Hc")
        if fam == "L":
            a = _num(op, "alpha", "operator", default=0.0)
            if a < 0:
                raise ConfigError("operator.alpha must be non-negative")
            _num(op, "lam", "operator", default=0.0)
        if fam == "E" and not isinstance(op.get("potential"), dict):
            raise ConfigError("operator.potential must be an object for E")

    def _validate_task(self):
        t = self.task
        for key in ("times", "radii", "seeds", "sources", "positions", "criteria"):
            if key in t and not isinstance(t[key], (list, dict)):
                raise ConfigError(f"task.{key} must be a list")
        if "times" in t:
            ts = t["times"]
            if isinstance(ts, dict):
                g = ts.get("geomspace")
                if not (isinstance(g, list) and len(g) == 3 and 0 < g[0] < g[1] and int(g[2]) >= 2):
                    raise ConfigError("task.times.geomspace must be [t_min, t_max, count]")
            elif not ts or any(isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0 for v in ts):
                raise ConfigError("task.times must be positive numbers")
        if "radii" in t and any(not isinstance(r, (int, float)) or r <= 0 for r in t["radii"]):
            raise ConfigError("task.radii must be positive numbers")
        if self.command == "hardy":
            kind = t.get("kind", "improved")
            if kind not in HARDY_KINDS:
                raise ConfigError(f"task.kind must be one of {HARDY_KINDS}")
        if self.command == "logsob" and t.get("kind", "boundary") not in ("origin", "boundary"):
            raise ConfigError("task.kind must be 'origin' or 'boundary'")
        if self.command == "harnack" and t.get("mode", "certify") not in ("certify", "counterexample"):
            raise ConfigError("task.mode must be 'certify' or 'counterexample'")
        for key in ("count", "samples", "n"):
            if key in t and (not isinstance(t[key], int) or isinstance(t[key], bool) or t[key] < 1):
                raise ConfigError(f"task.{key} must be a positive integer")
        _num(t, "budget", "task", positive=True)


def load_config(path, command=None):
    """Read and validate a JSON configuration file for ``command``."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"configuration file {p} not found") from exc
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot parse configuration {p}: {exc}") from exc
    if command is not None:
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        if raw.get("command") not in (None, command):
            raise ConfigError(f"configuration is for {raw['command']!r}, not {command!r}")
        raw = dict(raw, command=command)
    return RunConfig.from_dict(raw)
