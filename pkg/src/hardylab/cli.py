"""Command-line interface.

``hardylab <command> --config run.json --out DIR`` validates the
configuration, runs one command, writes CSV and JSON reports into ``DIR``
and exits with 0 (all verdicts pass), 1 (some verdict fails) or 2 (usage
or configuration error).  CSV bodies are deterministic; the only
timestamp is on the first (comment) line.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .config import COMMANDS, ConfigError, load_config

__all__ = ["Report", "Verdict", "run", "main"]

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


@dataclass
class Verdict:
    """One pass/fail record with a descriptive result id."""

    id: str
    passed: bool
    values: dict = field(default_factory=dict)

    def as_dict(self):
        return {"id": self.id, "passed": bool(self.passed), "values": _plain(self.values)}


@dataclass
class Report:
    command: str
    fingerprint: str
    verdicts: list
    artifacts: list
    wall_clock: float

    @property
    def passed(self):
        return all(v.passed for v in self.verdicts)

    def summary(self):
        n = len(self.verdicts)
        k = sum(v.passed for v in self.verdicts)
        return f"{self.command}: {k}/{n} verdicts pass"

    def as_dict(self):
        return {
            "command": self.command,
            "fingerprint": self.fingerprint,
            "verdicts": [v.as_dict() for v in self.verdicts],
            "artifacts": list(self.artifacts),
            "wall_clock": self.wall_clock,
            "passed": self.passed,
            "summary": self.summary(),
        }


def _plain(obj):
    import numpy as np

    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


class _Output:
    """Collects CSV tables and writes them once the command has finished."""

    def __init__(self, directory, command, fingerprint):
        self.directory = Path(directory)
        self.command = command
        self.fingerprint = fingerprint
        self.tables = {}

    def table(self, name, header, rows):
        self.tables[name] = (list(header), [list(r) for r in rows])

    def write(self, report_dict):
        self.directory.mkdir(parents=True, exist_ok=True)
        stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        paths = []
        for name, (header, rows) in sorted(self.tables.items()):
            buf = io.StringIO()
            buf.write(f"# hardylab {self.command} fingerprint={self.fingerprint} generated={stamp}\n")
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(_plain(v)) for v in r])
            p = self.directory / f"{name}.csv"
            p.write_text(buf.getvalue())
            paths.append(str(p))
        report_dict["artifacts"] = paths + [str(self.directory / "report.json")]
        (self.directory / "report.json").write_text(json.dumps(report_dict, indent=2, sort_keys=True))
        return paths


# ---------------------------------------------------------------------------
# setup helpers


def _domain(cfg):
    from .geometry import make_domain

    d = dict(cfg.domain)
    kind = d.pop("kind")
    return make_domain(kind, **d)


def _operator(cfg, domain):
    from .discretize import PotentialSpec, assemble, build_grid, singular_clearance

    g = cfg.grid
    fam = cfg.operator.get("family", "laplacian")
    clearance = g.get("clearance", singular_clearance(fam))
    grid = build_grid(domain, g["h"], stagger=g.get("stagger", True), clearance=clearance,
                      octant=g.get("octant", False))
    params = {k: v for k, v in cfg.operator.items() if k not in ("family", "potential")}
    if fam == "E":
        pot = cfg.operator["potential"]
        a = float(pot.get("v1_coeff", 0.0))
        b = float(pot.get("v2_const", 0.0))
        if abs(a) > 1:
            raise ConfigError("operator.potential.v1_coeff must lie in [-1, 1]")
        params["potential"] = PotentialSpec(
            v1=lambda p, d: a / (4 * d**2), v2=lambda p, d: b + 0 * d, name=f"E({a},{b})"
        )
    return assemble(domain, grid, fam, params)


def _times(task, default):
    import numpy as np

    ts = task.get("times", default)
    if isinstance(ts, dict):
        a, b, n = ts["geomspace"]
        return np.geomspace(a, b, int(n))
    return np.asarray(ts, float)


def _eigen(op, use_cache):
    from .cache import SpectralCache, cached_eigenpair

    return cached_eigenpair(op, SpectralCache() if use_cache else None)


# ---------------------------------------------------------------------------
# commands


def cmd_eig(cfg, out, use_cache):
    dom = _domain(cfg)
    op = _operator(cfg, dom)
    spec, hit = _eigen(op, use_cache)
    grid = op.grid
    out.table("eig", ["lambda1", "residual", "method", "nodes", "operator_fingerprint"],
              [[spec.lam, spec.residual, spec.method, grid.n, op.fingerprint()]])
    out.table("phi", [f"x{j}" for j in range(grid.dim)] + ["phi"],
              [list(p) + [v] for p, v in zip(grid.positions.tolist(), spec.phi.tolist())])
    ok = spec.residual <= 1e-8 and bool((spec.phi > 0).all())
    return [Verdict("principal-eigenpair", ok, {"lambda1": spec.lam, "residual": spec.residual,
                                                 "cache_hit": hit, "nodes": grid.n})]


def _envelope(cfg, N, lam1=None):
    from .bounds import Envelope

    t = cfg.task
    op = cfg.operator
    fam = t.get("envelope")
    if fam is None:
        fam = {"laplacian": "dirichlet-small", "K": "origin-small", "H": "bry-small", "Kc": "kc-small",
               "Hc": "hc-small", "L": "degenerate-L", "E": "general-E-small"}[op.get("family", "laplacian")]
    return Envelope(fam, N, alpha_param=t.get("alpha", op.get("alpha", 1.0)), lam_param=op.get("lam", 0.0),
                    c=op.get("c"), lam1=lam1)


def cmd_kernel(cfg, out, use_cache):
    from .bounds import fit_constants, kernel_samples
    from .heat import kernel_columns

    dom = _domain(cfg)
    op = _operator(cfg, dom)
    grid = op.grid
    t = cfg.task
    times = _times(t, {"geomspace": [4 * grid.h**2, 0.1, 12]})
    sources = [grid.nearest_node(p) for p in t.get("sources", [list(dom.bounding_box()[0] * 0.5 + dom.bounding_box()[1] * 0.5)])]
    slices = kernel_columns(op, sources, times)
    env = _envelope(cfg, grid.dim)
    if not env.gaussian:
        spec, _ = _eigen(op, use_cache)
        env = _envelope(cfg, grid.dim, lam1=spec.lam)
    smp = kernel_samples(slices, grid, origin_guard=op.family in ("K", "Kc"))
    fit = fit_constants(smp["x"], smp["y"], smp["t"], smp["k"], env, smp["dx"], smp["dy"])
    out.table("kernel", ["source", "t", "node", "k"],
              [[s.source, float(tt), int(s.source), float(s.values[j, s.source])]
               for s in slices for j, tt in enumerate(s.times)])
    e = fit.envelope
    out.table("kernel_fit", ["family", "feasible", "C1", "C2", "g1", "g2", "ratio", "samples"],
              [[e.family, fit.feasible, e.C1, e.C2, e.g1, e.g2, fit.ratio, len(smp["k"])]])
    return [Verdict(f"kernel-envelope:{e.family}", fit.feasible and (e.C1 or 0) > 0, fit.as_dict())]


def cmd_green(cfg, out, use_cache):
    from .bounds import Envelope, green_envelope_check, hc_exponent
    from .heat import green_function

    dom = _domain(cfg)
    op = _operator(cfg, dom)
    grid = op.grid
    spec, _ = _eigen(op, use_cache)
    pts = cfg.task.get("sources", [list(0.5 * (dom.bounding_box()[0] + dom.bounding_box()[1]))])
    greens = [green_function(op, grid.nearest_node(p), lam1=spec.lam) for p in pts]
    fam = cfg.operator.get("family", "laplacian")
    alpha = hc_exponent(cfg.operator["c"]) if fam == "Hc" else cfg.task.get("alpha", 2.0 if fam == "laplacian" else 1.0)
    fit = green_envelope_check(greens, Envelope("green", grid.dim, alpha_param=alpha), grid)
    e = fit.envelope
    out.table("green_fit", ["alpha", "feasible", "C1", "C2", "ratio"], [[alpha, fit.feasible, e.C1, e.C2, fit.ratio]])
    return [Verdict("green-envelope", fit.feasible and (e.C1 or 0) > 0, fit.as_dict())]


def cmd_harnack(cfg, out, use_cache):
    import math

    from .harnack import harnack_positions, harnack_sweep, weak_degenerate_counterexample

    t = cfg.task
    if t.get("mode", "certify") == "counterexample":
        rep = weak_degenerate_counterexample(alpha=float(t.get("alpha", 0.5)), N=int(t.get("dim", 2)))
        ref = [rep.refinement[k] for k in sorted(rep.refinement, reverse=True)]
        res = [rep.residuals[k] for k in sorted(rep.residuals, reverse=True)]
        out.table("counterexample", ["radius", "quotient"], list(zip(rep.radii.tolist(), rep.quotients.tolist())))
        out.table("counterexample_refinement", ["spacing", "quotient"],
                  sorted(((k, v) for k, v in rep.refinement.items()), reverse=True))
        # the Harnack constant is not uniform: quotients blow up as sampling resolves the boundary
        fails = all(b > a for a, b in zip(ref, ref[1:])) and all(b < a for a, b in zip(res, res[1:]))
        return [Verdict("harnack-failure-weak-degeneracy", fails,
                        {"growth_over_radii": rep.growth, "refinement": ref, "residuals": res})]
    dom = _domain(cfg)
    op = _operator(cfg, dom)
    pos = harnack_positions(dom, int(t.get("n", 20)), int(t.get("n_boundary", 8)), seed=int(t.get("seed", 0)))
    rep = harnack_sweep(op, pos, t.get("radii", [0.06, 0.08, 0.1]), t.get("seeds", [0, 1, 2, 3, 4]))
    out.table("harnack", ["x", "r", "seed", "Q"], [[" ".join(map(repr, x)), r, sd, q] for x, r, sd, q in rep.rows()])
    return [Verdict("parabolic-harnack", math.isfinite(rep.max_quotient), {"max_quotient": rep.max_quotient})]


def cmd_hardy(cfg, out, use_cache):
    from . import inequalities as ineq

    dom = _domain(cfg)
    t = cfg.task
    h = cfg.grid["h"]
    kind = t.get("kind", "improved")
    if kind == "improved":
        vs = [ineq.improved_hardy_constant(dom, h, octant=cfg.grid.get("octant"))]
    elif kind == "strip":
        vs = [ineq.boundary_strip_hardy(dom, float(t.get("delta", 0.1)), h, octant=cfg.grid.get("octant"),
                                        inner=t.get("inner", "free"))]
    elif kind == "plain":
        vs = [ineq.plain_hardy_constant(dom, h)]
    elif kind == "veps":
        vs = [ineq.veps_hardy_check(dom, float(t.get("eps", 0.05 * dom.inradius)), h)]
    elif kind == "log-remainder":
        vs = [ineq.bft_hardy_constant(dom, h, D=t.get("D"))]
    elif kind == "hardy-moser":
        vs = [ineq.hardy_moser_check(dom, h)]
    else:
        vs = list(ineq.hardy_sobolev_checks(dom, h, q=t.get("q"), which=tuple(t.get("which", ("boundary-q",)))).values())
    return _verdict_rows(out, "hardy", vs)


def _verdict_rows(out, name, vs):
    out.table(name, ["id", "constant", "direction", "passed", "label", "count", "excluded"],
              [[v.id, v.constant, v.direction, v.passed, v.label, v.count, v.excluded] for v in vs])
    return [Verdict(v.id, v.passed, v.as_dict()) for v in vs]


def _balls(cfg, dom):
    from .geometry import sample_balls

    t = cfg.task
    if "positions" in t:
        return [(p[:-1], p[-1]) for p in t["positions"]]
    return sample_balls(dom, int(t.get("n", 30)), seed=int(t.get("seed", 0)), r_range=(0.1, 0.4))


def cmd_poincare(cfg, out, use_cache):
    import numpy as np

    from . import inequalities as ineq
    from .geometry import WeightParams

    dom = _domain(cfg)
    w = WeightParams(float(cfg.operator.get("lam", 0.0)), float(cfg.operator.get("alpha", 0.0)))
    vs = [ineq.local_poincare_constant(dom, w, np.asarray(x, float), r, cfg.grid["h"]) for x, r in _balls(cfg, dom)]
    return _verdict_rows(out, "poincare", vs)


def cmd_moser(cfg, out, use_cache):
    import numpy as np

    from . import inequalities as ineq
    from .geometry import WeightParams

    dom = _domain(cfg)
    w = WeightParams(float(cfg.operator.get("lam", 0.0)), float(cfg.operator.get("alpha", 0.0)))
    nu = cfg.task.get("nu")
    vs = [ineq.local_moser_check(dom, w, np.asarray(x, float), r, cfg.grid["h"], nu=nu) for x, r in _balls(cfg, dom)]
    return _verdict_rows(out, "moser", vs)


def cmd_volume(cfg, out, use_cache):
    import math

    from .geometry import WeightParams, doubling_constant, sample_balls, volume_envelope_fit

    dom = _domain(cfg)
    w = WeightParams(float(cfg.operator.get("lam", 0.0)), float(cfg.operator.get("alpha", 0.0)))
    samples = sample_balls(dom, int(cfg.task.get("n", 50)), seed=int(cfg.task.get("seed", 0)), r_range=(0.1, 0.45))
    fit = volume_envelope_fit(dom, w, samples)
    dbl = doubling_constant(dom, w, samples)
    out.table("volume", ["x", "r", "V", "shape", "ratio"], [[" ".join(map(repr, r[0])), r[1], r[2], r[3], r[4]] for r in fit.rows])
    out.table("doubling", ["x", "r", "V_r", "V_2r", "ratio"], [[" ".join(map(repr, r[0])), r[1], r[2], r[3], r[4]] for r in dbl.rows])
    ok = math.isfinite(fit.c1) and fit.c1 > 0 and math.isfinite(fit.c2) and math.isfinite(dbl.constant)
    return [Verdict("volume-doubling", ok, {"c1": fit.c1, "c2": fit.c2, "C_D": dbl.constant})]


def cmd_logsob(cfg, out, use_cache):
    from . import inequalities as ineq

    dom = _domain(cfg)
    v = ineq.log_sobolev_checks(dom, cfg.grid["h"], cfg.task.get("kind", "boundary"))
    return _verdict_rows(out, "logsob", [v])


def cmd_certify(cfg, out, use_cache, budget=None):
    from .acceptance import run_suite

    numbers = cfg.task.get("criteria")
    budget = budget if budget is not None else cfg.task.get("budget")
    results = run_suite(numbers, budget=budget, log=lambda s: print(s, file=sys.stderr))
    out.table("certify", ["criterion", "title", "passed", "skipped", "budget"],
              [[r.number, r.title, r.passed, r.skipped, r.budget] for r in results])
    return [Verdict(f"criterion-{r.number}", r.passed, r.as_dict()) for r in results]


HANDLERS = {
    "eig": cmd_eig,
    "kernel": cmd_kernel,
    "green": cmd_green,
    "harnack": cmd_harnack,
    "hardy": cmd_hardy,
    "poincare": cmd_poincare,
    "moser": cmd_moser,
    "volume": cmd_volume,
    "logsob": cmd_logsob,
    "certify": cmd_certify,
}


def run(command, config_path, out_dir=None, use_cache=True, budget=None):
    """Run ``command``; returns ``(report, exit_status)``.

    Configuration problems raise :class:`ConfigError` before any compute.
    """
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    if config_path is None:
        if command != "certify":
            raise ConfigError("--config is required")
        from .config import RunConfig

        cfg = RunConfig.from_dict({"command": "certify"})
    else:
        cfg = load_config(config_path, command)
    out_dir = out_dir or cfg.output.get("directory") or "hardylab-out"
    out = _Output(out_dir, command, cfg.fingerprint())
    t0 = time.perf_counter()
    if command == "certify":
        verdicts = cmd_certify(cfg, out, use_cache, budget=budget)
    else:
        verdicts = HANDLERS[command](cfg, out, use_cache)
    report = Report(command, cfg.fingerprint(), verdicts, [], time.perf_counter() - t0)
    d = report.as_dict()
    report.artifacts = out.write(d)
    return report, EXIT_PASS if report.passed else EXIT_FAIL


def _parser():
    p = argparse.ArgumentParser(prog="hardylab", description="Heat kernel and Hardy inequality verification.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="BLAS/OpenMP thread count")
    p.add_argument("--budget", type=float, help="global time budget in seconds (certify)")
    p.add_argument("--no-cache", action="store_true", help="bypass the spectral cache")
    return p


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_PASS
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_USAGE
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        report, status = run(args.command, args.config, args.out, use_cache=not args.no_cache, budget=args.budget)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        # inadmissible parameters detected by the compute modules
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(report.summary())
    for v in report.verdicts:
        print(f"  {'PASS' if v.passed else 'FAIL'}  {v.id}")
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
