"""Small-solution branch of ``-Delta_{p_i} u_i = lam g_i(u)`` by Picard iteration.

The map ``K(lam, u)_i = (-Delta_{p_i})^-1(lam g_i(u))`` is a sup-norm
contraction for small ``lam``; its fixed points are the discrete solutions.
:func:`trace_branch` follows the curve ``lam -> u_lam`` by warm-started
Picard iteration and stops once contraction is lost.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError, PGelfandError, SolverFailure
from .geometry import DomainGrid, Field, SystemField
from .nonlinearity import Nonlinearity
from .plap import SolveConfig, energy, solve_dirichlet

__all__ = [
    "BranchPoint",
    "Branch",
    "PicardFailure",
    "ProbeReport",
    "LipschitzReport",
    "component_configs",
    "apply_K",
    "picard_solve",
    "trace_branch",
    "uniqueness_probe",
    "branch_lipschitz_check",
]

log = logging.getLogger(__name__)

REACHED = "reached_lambda_max"
CONTRACTION_LOST = "contraction_lost"
SOLVER_FAILURE = "solver_failure"

CONTRACTION_LIMIT = 0.99
STAGNATION_WINDOW = 20
# sup-norm beyond which iterates are treated as blown up
BLOWUP = 1e6


class PicardFailure(PGelfandError):
    """Picard iteration did not converge.

    ``reason`` is one of ``max_iters``, ``stagnation``, ``diverged`` or
    ``solver_failure``.
    """

    def __init__(self, reason, lam, iterations, last_step, detail=""):
        msg = f"Picard iteration failed at lambda={lam:g} after {iterations} iterations ({reason})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.reason = reason
        self.lam = lam
        self.iterations = iterations
        self.last_step = last_step


@dataclass
class BranchPoint:
    lam: float
    u: SystemField
    picard_iters: int
    contraction_estimate: float
    sup_norm: float
    last_step: float = 0.0
    steps: list = field(default_factory=list, repr=False)


@dataclass
class Branch:
    points: list
    termination: str
    p: tuple
    g: Nonlinearity
    failure: str = ""
    failed_lambda: float | None = None

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([pt.lam for pt in self.points])

    @property
    def last_lambda(self) -> float:
        return self.points[-1].lam if self.points else 0.0

    def __len__(self):
        return len(self.points)


def component_configs(p, cfg: SolveConfig | None = None, fp_tol: float | None = None):
    """One :class:`SolveConfig` per component.

    If ``fp_tol`` is given, the inner gradient tolerance is tightened to
    ``fp_tol / 100`` so solver error cannot pose as outer non-contraction.
    """
    base = cfg or SolveConfig()
    ps = [p] if np.isscalar(p) else list(p)
    out = []
    for pi in ps:
        if not 1 < pi <= 2:
            raise ConfigurationError(f"branch construction needs p in (1, 2], got {pi}")
        c = base.with_(p=float(pi))
        if fp_tol is not None:
            c = c.with_(grad_tol=min(c.grad_tol, fp_tol / 100.0))
        out.append(c)
    return out


def _configs(cfgs, d):
    if isinstance(cfgs, SolveConfig):
        cfgs = [cfgs] * d
    cfgs = list(cfgs)
    if len(cfgs) != d:
        raise ConfigurationError(f"need {d} solver configs, got {len(cfgs)}")
    return cfgs


def _as_system(u):
    if isinstance(u, SystemField):
        return u
    if isinstance(u, Field):
        return SystemField(u.grid, u.values[None, :])
    raise TypeError(f"expected a SystemField or Field, got {type(u).__name__}")


def apply_K(lam: float, u, g: Nonlinearity, cfgs, warm: SystemField | None = None) -> SystemField:
    """Evaluate ``K(lam, u)``: component ``i`` is ``(-Delta_{p_i})^-1(lam g_i(u))``.

    ``warm`` optionally supplies initial guesses for the inner solves.
    Raises :class:`SolverFailure` naming the component whose solve failed.
    """
    u = _as_system(u)
    if u.d != g.d:
        raise ConfigurationError(f"field has {u.d} components but g has {g.d}")
    cfgs = _configs(cfgs, g.d)
    grid = u.grid
    if lam == 0:
        return SystemField.zeros(grid, g.d)
    if not np.all(np.isfinite(u.values)):
        raise NumericalError("non-finite iterate")
    with np.errstate(over="raise", invalid="raise"):
        try:
            rhs = lam * g(u.values)
        except FloatingPointError as exc:
            raise NumericalError(f"overflow evaluating g: {exc}") from exc
    out = np.empty_like(u.values)
    for i in range(g.d):
        guess = None if warm is None else warm.component(i)
        try:
            ui, report = solve_dirichlet(Field(grid, rhs[i]), cfgs[i], u0=guess)
        except NumericalError as exc:
            raise SolverFailure(f"component {i + 1}: {exc}", component=i) from exc
        if not report.converged:
            raise SolverFailure(
                f"component {i + 1}: inner solve did not converge ({report.message}, "
                f"gradient {report.grad_norm:.3e} > {report.tolerance:.3e})",
                report=report,
                component=i,
            )
        out[i] = ui.values
    return SystemField(grid, out)


def picard_solve(
    lam: float,
    u0,
    g: Nonlinearity,
    cfgs,
    fp_tol: float = 1e-8,
    max_iters: int = 500,
) -> BranchPoint:
    """Iterate ``u <- K(lam, u)`` until successive iterates differ by at most ``fp_tol``.

    Returns the last iterate as a :class:`BranchPoint`; its
    ``contraction_estimate`` is the ratio of the last two step sizes.
    Raises :class:`PicardFailure` on divergence, stagnation (no new best
    step in 20 iterations) or when ``max_iters`` is exhausted.
    """
    if not fp_tol > 0:
        raise ConfigurationError("fp_tol must be positive")
    u = _as_system(u0)
    steps = []
    best, since_best = np.inf, 0
    for k in range(1, max_iters + 1):
        try:
            new = apply_K(lam, u, g, cfgs, warm=u)
        except NumericalError as exc:
            raise PicardFailure("diverged", lam, k, steps[-1] if steps else np.nan, str(exc)) from exc
        except SolverFailure as exc:
            raise PicardFailure("solver_failure", lam, k, steps[-1] if steps else np.nan, str(exc)) from exc
        step = float(np.max(np.abs(new.values - u.values), initial=0.0))
        steps.append(step)
        u = new
        if not np.isfinite(step) or new.sup_norm() > BLOWUP:
            raise PicardFailure("diverged", lam, k, step, "iterates blew up")
        if step <= fp_tol:
            if len(steps) >= 2 and steps[-2] > 0:
                kappa = step / steps[-2]
            else:
                kappa = 0.0
            return BranchPoint(
                lam=float(lam),
                u=u,
                picard_iters=k,
                contraction_estimate=float(kappa),
                sup_norm=u.sup_norm(),
                last_step=step,
                steps=steps,
            )
        if step < best:
            best, since_best = step, 0
        else:
            since_best += 1
            if since_best >= STAGNATION_WINDOW:
                raise PicardFailure("stagnation", lam, k, step)
    raise PicardFailure("max_iters", lam, max_iters, steps[-1])


def trace_branch(
    grid: DomainGrid,
    lambda_max: float,
    n_steps: int,
    g: Nonlinearity,
    cfgs,
    fp_tol: float = 1e-8,
    max_iters: int = 500,
) -> Branch:
    """Follow ``lam_j = j lambda_max / n_steps`` from the origin, warm-starting each step.

    The branch starts with the trivial point ``(0, 0)`` and stops early with
    ``contraction_lost`` when Picard fails or the observed contraction ratio
    reaches 0.99, and with ``solver_failure`` when an inner solve fails.
    ``lambda_max = 0`` yields an empty branch.
    """
    if int(n_steps) != n_steps or n_steps < 1:
        raise ConfigurationError(f"n_steps must be a positive integer, got {n_steps}")
    if lambda_max < 0:
        raise ConfigurationError("lambda_max must be non-negative")
    cfgs = _configs(cfgs, g.d)
    p = tuple(c.p for c in cfgs)
    if lambda_max == 0:
        return Branch([], REACHED, p, g)

    u = SystemField.zeros(grid, g.d)
    origin = picard_solve(0.0, u, g, cfgs, fp_tol, max_iters)
    points = [origin]
    for j in range(1, int(n_steps) + 1):
        lam = j * lambda_max / n_steps
        try:
            pt = picard_solve(lam, u, g, cfgs, fp_tol, max_iters)
        except PicardFailure as exc:
            reason = SOLVER_FAILURE if exc.reason == "solver_failure" else CONTRACTION_LOST
            log.info("branch stopped at lambda=%g: %s", lam, exc)
            return Branch(points, reason, p, g, failure=str(exc), failed_lambda=lam)
        if pt.contraction_estimate >= CONTRACTION_LIMIT:
            msg = f"contraction estimate {pt.contraction_estimate:.4f} >= {CONTRACTION_LIMIT}"
            return Branch(points, CONTRACTION_LOST, p, g, failure=msg, failed_lambda=lam)
        points.append(pt)
        u = pt.u
    return Branch(points, REACHED, p, g)


@dataclass
class ProbeReport:
    lam: float
    radius: float
    n_starts: int
    seed: int
    fp_tol: float
    start_sup_norms: list
    converged: list
    iterations: list
    limit_sup_norms: list
    clusters: list
    max_distance: float
    n_nonconvergent: int
    failures: list

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "radius": self.radius,
            "n_starts": self.n_starts,
            "seed": self.seed,
            "fp_tol": self.fp_tol,
            "n_clusters": self.n_clusters,
            "max_distance": self.max_distance,
            "n_nonconvergent": self.n_nonconvergent,
            "clusters": self.clusters,
            "starts": [
                {
                    "index": i,
                    "start_sup_norm": s,
                    "converged": c,
                    "iterations": it,
                    "limit_sup_norm": lim,
                }
                for i, (s, c, it, lim) in enumerate(
                    zip(self.start_sup_norms, self.converged, self.iterations, self.limit_sup_norms)
                )
            ],
            "failures": self.failures,
        }


def _probe_starts(grid, d, radius, n_starts, seed):
    rng = np.random.default_rng(seed)
    starts = [np.zeros((d, grid.n_interior))]
    for _ in range(n_starts):
        u0 = rng.uniform(-radius, radius, size=(d, grid.n_interior))
        starts.append(np.clip(u0, -radius, radius))
    return starts


def uniqueness_probe(
    grid: DomainGrid,
    lam: float,
    radius: float,
    n_starts: int,
    g: Nonlinearity,
    cfgs,
    fp_tol: float = 1e-8,
    seed: int = 0,
    max_iters: int = 500,
    jobs: int = 1,
) -> ProbeReport:
    """Run Picard from ``u0 = 0`` and ``n_starts`` random starts with ``|u0|_inf <= radius``.

    Limits closer than ``100 fp_tol`` in sup-norm share a cluster.
    Non-convergent starts are counted, not raised.
    """
    if not radius > 0:
        raise ConfigurationError("probe radius must be positive")
    if int(n_starts) != n_starts or n_starts < 2:
        raise ConfigurationError("uniqueness probe needs at least 2 random starts")
    cfgs = _configs(cfgs, g.d)
    starts = _probe_starts(grid, g.d, radius, int(n_starts), seed)

    def run(u0):
        try:
            return picard_solve(lam, SystemField(grid, u0), g, cfgs, fp_tol, max_iters)
        except PicardFailure as exc:
            return exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(u0) for u0 in starts]

    limits, failures = [], []
    conv, iters, sups = [], [], []
    for i, res in enumerate(results):
        if isinstance(res, BranchPoint):
            conv.append(True)
            iters.append(res.picard_iters)
            sups.append(res.sup_norm)
            limits.append((i, res.u.values))
        else:
            conv.append(False)
            iters.append(res.iterations)
            sups.append(None)
            failures.append({"index": i, "reason": res.reason, "message": str(res)})

    threshold = 100 * fp_tol
    clusters = []  # each: list of (start index, values)
    for i, vals in limits:
        for members in clusters:
            if np.max(np.abs(members[0][1] - vals)) <= threshold:
                members.append((i, vals))
                break
        else:
            clusters.append([(i, vals)])

    max_distance = 0.0
    for a in range(len(limits)):
        for b in range(a + 1, len(limits)):
            max_distance = max(max_distance, float(np.max(np.abs(limits[a][1] - limits[b][1]))))

    summary = []
    for members in clusters:
        diam = 0.0
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                diam = max(diam, float(np.max(np.abs(members[a][1] - members[b][1]))))
        summary.append(
            {
                "size": len(members),
                "starts": [i for i, _ in members],
                "sup_norm": float(np.max(np.abs(members[0][1]))),
                "diameter": diam,
            }
        )
    summary.sort(key=lambda c: c["sup_norm"])

    return ProbeReport(
        lam=float(lam),
        radius=float(radius),
        n_starts=int(n_starts),
        seed=int(seed),
        fp_tol=float(fp_tol),
        start_sup_norms=[float(np.max(np.abs(s))) for s in starts],
        converged=conv,
        iterations=iters,
        limit_sup_norms=sups,
        clusters=summary,
        max_distance=max_distance,
        n_nonconvergent=len(failures),
        failures=failures,
    )


def energy_seminorm(u: SystemField, p: Sequence[float]) -> float:
    """``max_i energy(u_i, p_i)^(1/p_i)``, the discrete W^{1,p} seminorm up to a constant."""
    return max(energy(u.component(i), pi, 0.0) ** (1.0 / pi) for i, pi in enumerate(p))


@dataclass
class LipschitzReport:
    lambdas: list
    sup_quotients: list
    energy_quotients: list
    max_sup_quotient: float
    max_energy_quotient: float
    min_sup_quotient: float
    fitted_exponent: float

    def to_dict(self) -> dict:
        return {
            "lambdas": self.lambdas,
            "sup_quotients": self.sup_quotients,
            "energy_quotients": self.energy_quotients,
            "max_sup_quotient": self.max_sup_quotient,
            "min_sup_quotient": self.min_sup_quotient,
            "max_energy_quotient": self.max_energy_quotient,
            "fitted_exponent": self.fitted_exponent,
        }


def branch_lipschitz_check(branch: Branch) -> LipschitzReport:
    """Difference quotients of ``lam -> u_lam`` in sup-norm and energy seminorm.

    ``fitted_exponent`` is the least-squares slope of ``log sup|u_lam|``
    against ``log lam`` over the points with ``lam > 0`` and nonzero ``u``
    (NaN when fewer than two such points exist).
    """
    pts = branch.points
    if len(pts) < 3:
        raise ConfigurationError("Lipschitz check needs at least 3 branch points")
    sup_q, en_q = [], []
    for a, b in zip(pts[:-1], pts[1:]):
        dl = b.lam - a.lam
        diff = b.u - a.u
        sup_q.append(diff.sup_norm() / dl)
        en_q.append(energy_seminorm(diff, branch.p) / dl)
    mask = [(pt.lam, pt.sup_norm) for pt in pts if pt.lam > 0 and pt.sup_norm > 0]
    if len(mask) >= 2:
        x, y = np.log(np.array(mask)).T
        slope = float(np.polyfit(x, y, 1)[0])
    else:
        slope = float("nan")
    return LipschitzReport(
        lambdas=[float(pt.lam) for pt in pts],
        sup_quotients=[float(q) for q in sup_q],
        energy_quotients=[float(q) for q in en_q],
        max_sup_quotient=float(max(sup_q)),
        max_energy_quotient=float(max(en_q)),
        min_sup_quotient=float(min(sup_q)),
        fitted_exponent=slope,
    )
