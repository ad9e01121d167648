"""Command-line entry point.

Subcommands::

    solve      one Picard solve at a single lambda
    branch     trace the small-solution branch up to lambda_max
    probe      run Picard from random starts and cluster the limits
    verify     run the property battery
    resolvent  apply J_alpha once to given data

Settings come from built-in defaults, then an optional JSON file
(``--config``), then flags; later sources win.  Every run that gets past
configuration writes ``manifest.json`` into the output directory.

Exit codes: 0 success, 1 a verified property failed, 2 bad configuration,
3 non-convergence, 4 file-system error, 5 more than one solution cluster.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, OutputError, PGelfandError
from .fixedpoint import (
    SOLVER_FAILURE,
    PicardFailure,
    branch_lipschitz_check,
    component_configs,
    picard_solve,
    trace_branch,
    uniqueness_probe,
)
from .geometry import Field, SystemField, build_interval, build_mask_domain, norm
from .nonlinearity import Nonlinearity
from .plap import Regularization, SolveConfig, resolvent
from .report import RunManifest, export_branch, export_field, import_field, write_json
from .verify import PROPERTIES, run_battery

__all__ = ["main", "build_parser", "resolve_config", "build_grid", "EXIT"]

log = logging.getLogger("pgelfand")

EXIT = {
    "ok": 0,
    "verify_failed": 1,
    "config": 2,
    "nonconvergence": 3,
    "io": 4,
    "clusters": 5,
}

COMMANDS = ("solve", "branch", "probe", "verify", "resolvent")

DEFAULTS = {
    "domain": None,
    "resolution": None,
    "p": None,
    "g": None,
    "lam": None,
    "lambda_max": None,
    "steps": None,
    "eps_start": 1e-1,
    "eps_end": 1e-8,
    "eps_steps": 8,
    "grad_tol": 1e-9,
    "max_newton_iters": 100,
    "fp_tol": 1e-8,
    "max_picard_iters": 500,
    "seed": 0,
    "out": None,
    "jobs": 1,
    "radius": 0.5,
    "n_starts": 8,
    "properties": None,
    "samples": 50,
    "alpha": None,
    "input": None,
    "f_value": 1.0,
    "dump_fields": False,
}

# per-command defaults that differ from the global ones
COMMAND_DEFAULTS = {
    "solve": {"domain": "square", "resolution": 64, "p": [2.0], "g": ["exp"]},
    "branch": {"domain": "square", "resolution": 64, "p": [2.0], "g": ["exp"]},
    "probe": {"domain": "square", "resolution": 64, "p": [2.0], "g": ["exp"]},
    "verify": {"domain": "square,disc", "resolution": 32, "p": [1.5, 2.0]},
    "resolvent": {"domain": "square", "resolution": 64, "p": [2.0]},
}


def _add_common(sub):
    s = argparse.SUPPRESS
    sub.add_argument("--config", default=s, help="JSON file with settings; flags override it")
    sub.add_argument("--domain", default=s, help="interval:LENGTH:NODES, square[:side], disc[:r], "
                     "annulus[:r_in:r_out], lshape or file:PATH; an @RES suffix sets the resolution")
    sub.add_argument("--resolution", type=int, default=s, help="lattice cells across the bounding box")
    sub.add_argument("--p", type=float, action="append", default=s, help="exponent per component (repeatable)")
    sub.add_argument("--g", action="append", default=s, help="nonlinearity per component (repeatable)")
    sub.add_argument("--eps-start", type=float, default=s)
    sub.add_argument("--eps-end", type=float, default=s)
    sub.add_argument("--eps-steps", type=int, default=s)
    sub.add_argument("--grad-tol", type=float, default=s)
    sub.add_argument("--max-newton-iters", type=int, default=s)
    sub.add_argument("--fp-tol", type=float, default=s)
    sub.add_argument("--max-picard-iters", type=int, default=s)
    sub.add_argument("--seed", type=int, default=s)
    sub.add_argument("--out", default=s, help="output directory (default: $PGELFAND_OUT or ./pgelfand-out)")
    sub.add_argument("--jobs", type=int, default=s, help="worker threads for probe starts and verify checks")
    sub.add_argument("-v", "--verbose", action="store_true", default=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgelfand", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    s = argparse.SUPPRESS

    p = subs.add_parser("solve", help="Picard solve at one lambda from u0 = 0")
    _add_common(p)
    p.add_argument("--lambda", dest="lam", type=float, default=s)

    p = subs.add_parser("branch", help="trace the small-solution branch")
    _add_common(p)
    p.add_argument("--lambda-max", type=float, default=s)
    p.add_argument("--steps", type=int, default=s)
    p.add_argument("--dump-fields", action="store_true", default=s, help="write one field CSV per point")

    p = subs.add_parser("probe", help="uniqueness probe from random starts")
    _add_common(p)
    p.add_argument("--lambda", dest="lam", type=float, default=s)
    p.add_argument("--radius", type=float, default=s)
    p.add_argument("--n-starts", type=int, default=s)

    p = subs.add_parser("verify", help="run the property battery")
    _add_common(p)
    p.add_argument("--properties", default=s, help=f"comma-separated subset of {','.join(PROPERTIES)}")
    p.add_argument("--samples", type=int, default=s, help="random pairs per contraction check")

    p = subs.add_parser("resolvent", help="apply J_alpha once")
    _add_common(p)
    p.add_argument("--alpha", type=float, default=s)
    p.add_argument("--input", default=s, help="field CSV with the data f (default: constant --f-value)")
    p.add_argument("--f-value", type=float, default=s)
    return parser


def _load_config_file(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    out = {}
    for key, value in data.items():
        k = key.replace("-", "_")
        if k == "lambda":
            k = "lam"
        if k not in DEFAULTS:
            raise ConfigurationError(f"{path}: unknown setting {key!r}")
        out[k] = value
    return out


def resolve_config(command: str, flags: dict, environ=None) -> dict:
    """Merge defaults, the optional config file and explicit flags; validate the result."""
    environ = os.environ if environ is None else environ
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS[command])
    flags = dict(flags)
    if "config" in flags:
        cfg.update(_load_config_file(flags.pop("config")))
    cfg.update(flags)
    if cfg["out"] is None:
        cfg["out"] = environ.get("PGELFAND_OUT") or "pgelfand-out"
    for key in ("p", "g"):
        if isinstance(cfg[key], (str, int, float)):
            cfg[key] = [cfg[key]]
    if isinstance(cfg["properties"], str):
        cfg["properties"] = [s.strip() for s in cfg["properties"].split(",") if s.strip()]
    _validate(command, cfg)
    return cfg


def _require(cond, msg):
    if not cond:
        raise ConfigurationError(msg)


def _validate(command, cfg):
    ps = [float(x) for x in cfg["p"]]
    cfg["p"] = ps
    for x in ps:
        _require(1 < x <= 2 if command != "resolvent" else x > 1, f"p must lie in (1, 2], got {x}")
    if command in ("solve", "branch", "probe"):
        _require(len(ps) == len(cfg["g"]), f"{len(ps)} exponents given for {len(cfg['g'])} nonlinearity components")
    if command == "resolvent":
        _require(len(ps) == 1, "resolvent takes a single exponent")
    _require(cfg["grad_tol"] > 0, "grad-tol must be positive")
    _require(cfg["fp_tol"] > 0, "fp-tol must be positive")
    _require(cfg["jobs"] >= 1, "jobs must be at least 1")
    _require(cfg["max_newton_iters"] >= 1, "max-newton-iters must be at least 1")
    _require(cfg["max_picard_iters"] >= 1, "max-picard-iters must be at least 1")
    if command in ("solve", "probe"):
        _require(cfg["lam"] is not None, "--lambda is required")
        _require(math.isfinite(cfg["lam"]), "lambda must be finite")
    if command == "probe":
        _require(cfg["radius"] > 0, "radius must be positive")
        _require(cfg["n_starts"] >= 2, "n-starts must be at least 2")
    if command == "branch":
        _require(cfg["lambda_max"] is not None, "--lambda-max is required")
        _require(cfg["lambda_max"] >= 0, "lambda-max must be non-negative")
        _require(cfg["steps"] is not None and cfg["steps"] >= 1, "steps must be at least 1")
    if command == "verify":
        props = cfg["properties"]
        if props is not None:
            unknown = [x for x in props if x not in PROPERTIES]
            _require(not unknown, f"unknown properties {unknown}; choose from {list(PROPERTIES)}")
        _require(cfg["samples"] >= 1, "samples must be at least 1")
    if command == "resolvent":
        _require(cfg["alpha"] is not None and cfg["alpha"] > 0, "--alpha must be positive")


def _split_domain(spec: str, resolution):
    kind, _, rest = spec.partition(":")
    base, at, tail = spec.rpartition("@")
    if at and tail.isdigit() and kind.strip().lower() != "interval":
        return base, int(tail)
    return spec, resolution


def build_grid(spec: str, resolution):
    """Grid from a CLI descriptor: ``interval:LENGTH:NODES`` or a 2-D shape."""
    kind, _, rest = spec.partition(":")
    if kind.strip().lower() == "interval":
        parts = [x for x in rest.split(":") if x]
        try:
            length = float(parts[0]) if parts else 1.0
            nodes = int(parts[1]) if len(parts) > 1 else 101
        except ValueError as exc:
            raise ConfigurationError(f"bad interval descriptor {spec!r}; use interval:LENGTH:NODES") from exc
        return build_interval(length, nodes)
    shape, res = _split_domain(spec, resolution)
    return build_mask_domain(shape, res)


def _solver_config(cfg, p=2.0) -> SolveConfig:
    reg = Regularization(cfg["eps_start"], cfg["eps_end"], cfg["eps_steps"])
    return SolveConfig(p=p, reg=reg, grad_tol=cfg["grad_tol"], max_newton_iters=cfg["max_newton_iters"])


def _snapshot(command, cfg, grid_descriptions, g=None):
    snap = {k: v for k, v in cfg.items() if k != "out"}
    snap["command"] = command
    snap["grids"] = grid_descriptions
    if g is not None:
        snap["g_parsed"] = g.specs()
    return snap


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg, out: Path, manifest: RunManifest) -> int:
    grid = build_grid(cfg["domain"], cfg["resolution"])
    g = Nonlinearity.parse(cfg["g"])
    cfgs = component_configs(cfg["p"], _solver_config(cfg), cfg["fp_tol"])
    manifest.config = _snapshot("solve", cfg, [grid.description], g)
    u0 = SystemField.zeros(grid, g.d)
    lam = cfg["lam"]
    result = {"lambda": lam, "p": cfg["p"], "g": g.specs(), "fp_tol": cfg["fp_tol"]}
    try:
        pt = picard_solve(lam, u0, g, cfgs, cfg["fp_tol"], cfg["max_picard_iters"])
    except PicardFailure as exc:
        result.update(converged=False, reason=exc.reason, message=str(exc), iterations=exc.iterations,
                      last_step=exc.last_step)
        manifest.add(write_json(result, out / "solve.json"))
        print(f"solve: no convergence at lambda={lam:g} ({exc.reason})")
        manifest.message = str(exc)
        return EXIT["nonconvergence"]
    field = pt.u if g.d > 1 else pt.u.component(0)
    manifest.add(export_field(field, out / "field.csv"))
    result.update(
        converged=True,
        picard_iters=pt.picard_iters,
        contraction_estimate=pt.contraction_estimate,
        last_step=pt.last_step,
        steps=pt.steps,
        sup_norm=pt.sup_norm,
        lipschitz_of_g_on_ball=g.lipschitz_on(pt.sup_norm),
    )
    manifest.add(write_json(result, out / "solve.json"))
    print(f"solve: converged at lambda={lam:g} in {pt.picard_iters} Picard steps, sup norm {pt.sup_norm:.6g}")
    return EXIT["ok"]


def cmd_branch(cfg, out: Path, manifest: RunManifest) -> int:
    grid = build_grid(cfg["domain"], cfg["resolution"])
    g = Nonlinearity.parse(cfg["g"])
    cfgs = component_configs(cfg["p"], _solver_config(cfg), cfg["fp_tol"])
    manifest.config = _snapshot("branch", cfg, [grid.description], g)
    branch = trace_branch(grid, cfg["lambda_max"], cfg["steps"], g, cfgs, cfg["fp_tol"], cfg["max_picard_iters"])
    manifest.add(export_branch(branch, out / "branch.csv", dump_fields=bool(cfg["dump_fields"])))
    summary = {
        "termination": branch.termination,
        "failure": branch.failure,
        "failed_lambda": branch.failed_lambda,
        "last_lambda": branch.last_lambda,
        "n_points": len(branch),
        "max_contraction_estimate": max((pt.contraction_estimate for pt in branch.points), default=None),
    }
    if len(branch) >= 3:
        summary["quotients"] = branch_lipschitz_check(branch)
    else:
        summary["quotients"] = None
    manifest.add(write_json(summary, out / "quotients.json"))
    print(f"branch: {len(branch)} points, last lambda {branch.last_lambda:g}, termination {branch.termination}")
    if branch.termination == SOLVER_FAILURE:
        manifest.message = branch.failure
        return EXIT["nonconvergence"]
    return EXIT["ok"]


def cmd_probe(cfg, out: Path, manifest: RunManifest) -> int:
    grid = build_grid(cfg["domain"], cfg["resolution"])
    g = Nonlinearity.parse(cfg["g"])
    cfgs = component_configs(cfg["p"], _solver_config(cfg), cfg["fp_tol"])
    manifest.config = _snapshot("probe", cfg, [grid.description], g)
    rep = uniqueness_probe(
        grid, cfg["lam"], cfg["radius"], cfg["n_starts"], g, cfgs,
        cfg["fp_tol"], seed=cfg["seed"], max_iters=cfg["max_picard_iters"], jobs=cfg["jobs"],
    )
    manifest.add(write_json(rep, out / "probe.json"))
    print(f"probe: {rep.n_clusters} cluster(s), {rep.n_nonconvergent} non-convergent start(s)")
    if rep.n_clusters == 0:
        manifest.message = "no start converged"
        return EXIT["nonconvergence"]
    if rep.n_clusters > 1:
        return EXIT["clusters"]
    return EXIT["ok"]


def cmd_verify(cfg, out: Path, manifest: RunManifest) -> int:
    specs = [s.strip() for s in str(cfg["domain"]).split(",") if s.strip()]
    grids = {s: build_grid(s, cfg["resolution"]) for s in specs}
    manifest.config = _snapshot("verify", cfg, [gr.description for gr in grids.values()])
    reports = run_battery(
        domains=specs,
        resolution=cfg["resolution"],
        ps=cfg["p"],
        cfg=_solver_config(cfg),
        seed=cfg["seed"],
        properties=cfg["properties"],
        n_samples=cfg["samples"],
        grids=grids,
        jobs=cfg["jobs"],
    )
    failed = [r for r in reports if not r.passed]
    doc = {
        "seed": cfg["seed"],
        "passed": not failed,
        "n_checks": len(reports),
        "n_failed": len(failed),
        "reports": reports,
    }
    manifest.add(write_json(doc, out / "verify.json"))
    for r in failed:
        print(f"FAILED {r.name} {r.details.get('domain', '')} p={r.details.get('p', '')}: "
              f"worst {r.worst:.3e} > tolerance {r.tolerance:.3e} {r.error}".rstrip())
    print(f"verify: {len(reports) - len(failed)}/{len(reports)} checks passed")
    return EXIT["ok"] if not failed else EXIT["verify_failed"]


def cmd_resolvent(cfg, out: Path, manifest: RunManifest) -> int:
    grid = build_grid(cfg["domain"], cfg["resolution"])
    manifest.config = _snapshot("resolvent", cfg, [grid.description])
    if cfg["input"]:
        f = import_field(cfg["input"], grid)
        if isinstance(f, SystemField):
            raise ConfigurationError("resolvent input must have a single value column")
    else:
        f = Field(grid, np.full(grid.n_interior, float(cfg["f_value"])))
    scfg = _solver_config(cfg, p=cfg["p"][0])
    u, rep = resolvent(cfg["alpha"], f, scfg)
    manifest.add(export_field(u, out / "resolvent_field.csv"))
    manifest.add(write_json({"alpha": cfg["alpha"], "p": scfg.p, "f_sup": norm(f), "sup_norm": norm(u),
                             "report": rep}, out / "resolvent.json"))
    print(f"resolvent: sup norm {norm(u):.6g}, converged {rep.converged}")
    if not rep.converged:
        manifest.message = rep.message
        return EXIT["nonconvergence"]
    return EXIT["ok"]


HANDLERS = {
    "solve": cmd_solve,
    "branch": cmd_branch,
    "probe": cmd_probe,
    "verify": cmd_verify,
    "resolvent": cmd_resolvent,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        cfg = resolve_config(command, flags)
    except ConfigurationError as exc:
        print(f"pgelfand {command}: configuration error: {exc}", file=sys.stderr)
        return EXIT["config"]

    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"pgelfand {command}: cannot create output directory {out}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT["io"]

    manifest = RunManifest(command=command, config=_snapshot(command, cfg, []), seed=cfg["seed"], root=out)
    code = EXIT["ok"]
    try:
        code = HANDLERS[command](cfg, out, manifest)
    except ConfigurationError as exc:
        print(f"pgelfand {command}: configuration error: {exc}", file=sys.stderr)
        manifest.message = str(exc)
        code = EXIT["config"]
    except OutputError as exc:
        print(f"pgelfand {command}: {exc}", file=sys.stderr)
        manifest.message = str(exc)
        code = EXIT["io"]
    except PGelfandError as exc:
        print(f"pgelfand {command}: {exc}", file=sys.stderr)
        manifest.message = str(exc)
        code = EXIT["nonconvergence"]
    finally:
        manifest.exit_code = code
        manifest.status = {0: "ok", 1: "verify_failed", 2: "config_error", 3: "nonconvergence",
                           4: "io_error", 5: "multiple_clusters"}.get(code, "error")
        try:
            manifest.write(out / "manifest.json")
        except OutputError as exc:
            print(f"pgelfand {command}: {exc}", file=sys.stderr)
            code = EXIT["io"]
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
