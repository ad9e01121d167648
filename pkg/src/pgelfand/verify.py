"""Property battery for the discrete p-Laplacian, its inverse and its resolvent.

Every check returns a :class:`PropertyReport` whose ``passed`` flag is
``worst <= tolerance``.  Tolerances are multiples of the solver tolerance so
that numerical error is separated from genuine violations.

Random data: nodewise uniform on ``[-a, a]`` with ``a`` drawn from
``[0.1, 10]``, smoothed by one linear resolvent step with ``alpha = h^2``.
All randomness flows from an explicit seed.
"""

from __future__ import annotations

import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, PGelfandError
from .geometry import DomainGrid, Field, build_mask_domain, norm
from .plap import SolveConfig, dirichlet_scale, resolvent, scale_solution, solve_dirichlet

__all__ = [
    "PropertyReport",
    "random_field",
    "check_resolvent_identity",
    "check_lq_contraction",
    "check_lq_contractions",
    "check_best_estimate",
    "check_resolvent_convergence",
    "check_scaling_law",
    "PROPERTIES",
    "run_battery",
]

log = logging.getLogger(__name__)

# resolvent parameters for the contraction check and the data level of the
# deterministic checks; see README "Known limitations" for small alpha
CONTRACTION_ALPHAS = (0.1, 1.0)
SMOOTH_LEVEL = 10.0

PROPERTIES = (
    "resolvent_identity",
    "lq_contraction",
    "best_estimate",
    "resolvent_convergence",
    "scaling_law",
)


@dataclass
class PropertyReport:
    name: str
    tolerance: float
    worst: float
    samples: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    error: str = ""

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def passed(self) -> bool:
        return not self.error and bool(np.isfinite(self.worst)) and self.worst <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "worst": self.worst,
            "n_samples": self.n_samples,
            "details": self.details,
            "error": self.error,
            "samples": self.samples,
        }


def random_field(grid: DomainGrid, rng: np.random.Generator, amplitude: float | None = None) -> Field:
    """Smoothed random field with sup-norm at most ``amplitude`` (default: drawn from [0.1, 10])."""
    a = rng.uniform(0.1, 10.0) if amplitude is None else float(amplitude)
    raw = Field(grid, rng.uniform(-a, a, grid.n_interior))
    smooth, _ = resolvent(grid.h**2, raw, SolveConfig(p=2.0))
    return smooth


def _require(report, what):
    if not report.converged:
        raise PGelfandError(f"{what}: solve did not converge ({report.message})")


def check_resolvent_identity(alpha: float, beta: float, f: Field, cfg: SolveConfig) -> PropertyReport:
    """Residual of ``J_beta f = J_alpha((alpha/beta) f + (1 - alpha/beta) J_beta f)`` in sup-norm."""
    if not (alpha > 0 and beta > 0):
        raise ConfigurationError("alpha and beta must be positive")
    f_sup = norm(f)
    scale = f_sup
    tol = 50 * cfg.grad_tol * max(1.0, f_sup)
    if f_sup == 0:
        return PropertyReport("resolvent_identity", tol, 0.0, [{"alpha": alpha, "beta": beta, "residual": 0.0}])
    jb, rep_b = resolvent(beta, f, cfg, scale=scale)
    _require(rep_b, "J_beta f")
    ratio = alpha / beta
    inner = f * ratio + jb * (1.0 - ratio)
    rhs, rep_a = resolvent(alpha, inner, cfg, scale=scale)
    _require(rep_a, "J_alpha(...)")
    r = norm(jb - rhs)
    return PropertyReport(
        "resolvent_identity",
        tol,
        r,
        [{"alpha": alpha, "beta": beta, "f_sup": f_sup, "residual": r}],
    )


def _pairs(grid, rng, n):
    """Alternate independent random pairs with shifts ``g = f + c * indicator``."""
    coords = grid.coordinates()
    for k in range(n):
        f = random_field(grid, rng)
        if k % 2 == 0:
            g = random_field(grid, rng)
            kind = "independent"
        else:
            c = rng.uniform(-1.0, 1.0)
            if k % 4 == 1:
                ind = np.ones(grid.n_interior)
                kind = "constant shift"
            else:
                # indicator of a random half-plane through the centroid
                theta = rng.uniform(0, 2 * np.pi)
                centre = coords.mean(axis=0)
                direction = np.array([np.cos(theta), np.sin(theta)])[: grid.dimension]
                ind = ((coords - centre) @ direction > 0).astype(float)
                kind = "indicator shift"
            g = f + c * ind
        yield kind, f, g


def check_lq_contractions(
    grid: DomainGrid,
    alpha: float,
    qs: Sequence[float],
    n_samples: int,
    cfg: SolveConfig,
    seed: int = 0,
) -> list:
    """Contraction ratios ``|J f - J g|_q / |f - g|_q`` for several ``q`` on shared samples."""
    for q in qs:
        if not q >= 2:
            raise ConfigurationError(f"contraction is checked for q in [2, inf], got {q}")
    if n_samples < 1:
        raise ConfigurationError("need at least one sample")
    rng = np.random.default_rng(seed)
    per_q = {q: [] for q in qs}
    skipped = 0
    for kind, f, g in _pairs(grid, rng, n_samples):
        if np.array_equal(f.values, g.values):
            skipped += 1
            continue
        scale = max(norm(f), norm(g))
        jf, rf = resolvent(alpha, f, cfg, scale=scale)
        jg, rg = resolvent(alpha, g, cfg, scale=scale)
        _require(rf, "J f")
        _require(rg, "J g")
        diff_in, diff_out = f - g, jf - jg
        for q in qs:
            ratio = norm(diff_out, q) / norm(diff_in, q)
            per_q[q].append({"kind": kind, "ratio": ratio})
    reports = []
    for q in qs:
        ratios = [s["ratio"] for s in per_q[q]]
        worst = max(ratios) - 1.0 if ratios else -1.0
        reports.append(
            PropertyReport(
                "lq_contraction",
                1e-6,
                worst,
                per_q[q],
                {"q": _qlabel(q), "alpha": alpha, "max_ratio": worst + 1.0, "skipped": skipped, "seed": seed},
            )
        )
    return reports


def check_lq_contraction(grid, alpha, q, n_samples, cfg, seed=0) -> PropertyReport:
    """``J_alpha`` is a contraction in the lumped L^q norm: max ratio <= 1 + 1e-6."""
    return check_lq_contractions(grid, alpha, [q], n_samples, cfg, seed)[0]


def _qlabel(q):
    return "inf" if math.isinf(q) else q


def best_estimate_ratio(u, v, f, g, p, q):
    """``|u - v|_inf / ((|f|_q + |g|_q)^((2-p)/(p-1)) |f - g|_q)``."""
    denom = (norm(f, q) + norm(g, q)) ** ((2.0 - p) / (p - 1.0)) * norm(f - g, q)
    return norm(u - v) / denom


def check_best_estimate(
    grid: DomainGrid,
    p: float,
    n_samples: int,
    cfg: SolveConfig,
    q: float = np.inf,
    magnitudes: Sequence[float] = (1e-2, 1e-1, 1.0, 1e1, 1e2),
    seed: int = 0,
) -> PropertyReport:
    """Empirical constant of the local Lipschitz bound for ``(-Delta_p)^-1``.

    For each magnitude ``m`` the pairs ``(m f, m g)`` are solved and the
    largest ratio is recorded.  ``worst`` is the spread (max over min) of
    those per-magnitude maxima; it passes below 2.  ``details["constant"]``
    is the overall maximum ratio.
    """
    if not 1 < p <= 2:
        raise ConfigurationError(f"the estimate is stated for p in (1, 2], got {p}")
    cfg = cfg.with_(p=p)
    rng = np.random.default_rng(seed)
    base = []
    for _ in range(n_samples):
        f = random_field(grid, rng)
        g = random_field(grid, rng)
        base.append((f, g))
    samples = []
    per_mag = []
    for m in magnitudes:
        best = 0.0
        for idx, (f0, g0) in enumerate(base):
            f, g = f0 * m, g0 * m
            scale = dirichlet_scale(max(norm(f), norm(g)), p)
            u, ru = solve_dirichlet(f, cfg, scale=scale)
            v, rv = solve_dirichlet(g, cfg, scale=scale)
            _require(ru, "u")
            _require(rv, "v")
            r = best_estimate_ratio(u, v, f, g, p, q)
            samples.append({"magnitude": m, "pair": idx, "ratio": r})
            best = max(best, r)
        per_mag.append(best)
    per_mag = np.array(per_mag)
    finite = bool(np.all(np.isfinite(per_mag)) and np.all(per_mag > 0))
    spread = float(per_mag.max() / per_mag.min()) if finite else math.inf
    return PropertyReport(
        "best_estimate",
        2.0,
        spread,
        samples,
        {
            "p": p,
            "q": _qlabel(q),
            "constant": float(per_mag.max()),
            "per_magnitude": {repr(m): float(b) for m, b in zip(magnitudes, per_mag)},
            "seed": seed,
        },
    )


def check_resolvent_convergence(
    beta: float, alphas: Sequence[float], f: Field, cfg: SolveConfig, slack: float = 1e-9
) -> PropertyReport:
    """``e(alpha) = |J_alpha(J_beta f) - J_beta f|_inf`` decreases as ``alpha -> 0``.

    Passes when ``e`` is non-increasing along ``alphas`` (up to ``slack``)
    and ``e(min alpha) <= 0.05 |J_beta f|_inf``.  ``worst`` is normalized so
    that both conditions read ``worst <= 1``.
    """
    alphas = [float(a) for a in alphas]
    if any(a <= 0 for a in alphas) or any(b >= a for a, b in zip(alphas, alphas[1:])):
        raise ConfigurationError("alphas must be positive and strictly decreasing")
    scale = norm(f)
    if scale == 0:
        return PropertyReport("resolvent_convergence", 1.0, 0.0, [{"alpha": a, "e": 0.0} for a in alphas])
    jb, rb = resolvent(beta, f, cfg, scale=scale)
    _require(rb, "J_beta f")
    errors = []
    for a in alphas:
        ja, ra = resolvent(a, jb, cfg, scale=scale)
        _require(ra, "J_alpha J_beta f")
        errors.append(norm(ja - jb))
    increases = [e1 - e0 for e0, e1 in zip(errors, errors[1:])]
    max_increase = max(increases) if increases else -math.inf
    target = 0.05 * norm(jb)
    final_ratio = errors[-1] / target if target > 0 else 0.0
    monotone = max_increase / slack if increases else 0.0
    worst = max(monotone, final_ratio)
    return PropertyReport(
        "resolvent_convergence",
        1.0,
        worst,
        [{"alpha": a, "e": e} for a, e in zip(alphas, errors)],
        {"beta": beta, "max_increase": max_increase, "final_over_bound": final_ratio, "J_beta_sup": norm(jb)},
    )


def check_scaling_law(p: float, lambdas: Sequence[float], f: Field, cfg: SolveConfig) -> PropertyReport:
    """``(-Delta_p)^-1(lam f) = lam^(1/(p-1)) (-Delta_p)^-1 f`` in relative sup-norm."""
    if any(lam <= 0 for lam in lambdas):
        raise ConfigurationError("scaling law is checked for positive lambdas")
    cfg = cfg.with_(p=p)
    tol = 10 * (cfg.grad_tol + cfg.reg.eps_end**p)
    base, rep = solve_dirichlet(f, cfg)
    _require(rep, "base solve")
    samples = []
    for lam in lambdas:
        u, r = solve_dirichlet(f * lam, cfg)
        _require(r, f"solve at lambda={lam}")
        ref = scale_solution(base, lam, p)
        top = norm(ref)
        disc = norm(u - ref) / top if top > 0 else norm(u)
        samples.append({"lambda": lam, "discrepancy": disc})
    worst = max(s["discrepancy"] for s in samples) if samples else 0.0
    return PropertyReport("scaling_law", tol, worst, samples, {"p": p})


def _smooth_data(grid):
    # constant data at the top of the sampled amplitude range
    return Field(grid, np.full(grid.n_interior, SMOOTH_LEVEL))


def _guard(name, meta, fn):
    try:
        reports = fn()
    except PGelfandError as exc:
        log.warning("%s failed: %s", name, exc)
        reports = [PropertyReport(name, 0.0, math.inf, error=str(exc))]
    if isinstance(reports, PropertyReport):
        reports = [reports]
    for r in reports:
        r.details = {**meta, **r.details}
    return reports


def _task(name, meta, fn, *args, **kwargs):
    return functools.partial(_guard, name, meta, functools.partial(fn, *args, **kwargs))


def run_battery(
    domains: Sequence[str] = ("square", "disc"),
    resolution: int = 32,
    ps: Sequence[float] = (1.5, 2.0),
    cfg: SolveConfig | None = None,
    seed: int = 0,
    properties: Sequence[str] | None = None,
    n_samples: int = 50,
    n_identity: int = 5,
    n_estimate: int = 4,
    grids: dict | None = None,
    jobs: int = 1,
) -> list:
    """Run the default property battery; returns a flat list of reports.

    A solver failure inside one check marks that check failed and the
    battery carries on.  With ``jobs > 1`` independent checks run on a
    thread pool; the report order does not depend on ``jobs``.
    """
    cfg = cfg or SolveConfig()
    wanted = list(PROPERTIES if properties is None else properties)
    unknown = [w for w in wanted if w not in PROPERTIES]
    if unknown:
        raise ConfigurationError(f"unknown properties: {unknown}; choose from {list(PROPERTIES)}")
    tasks = []
    for d_index, dom in enumerate(domains):
        grid = (grids or {}).get(dom) or build_mask_domain(dom, resolution)
        for p_index, p in enumerate(ps):
            pcfg = cfg.with_(p=p)
            sub_seed = seed + 1000 * d_index + 100 * p_index
            meta = {"domain": grid.description, "p": p}
            if "resolvent_identity" in wanted:
                rng = np.random.default_rng(sub_seed)
                fs = [random_field(grid, rng) for _ in range(n_identity)]
                for alpha, beta in ((0.1, 1.0), (1.0, 0.1), (0.5, 0.5)):
                    for k, f in enumerate(fs):
                        tasks.append(
                            _task(
                                "resolvent_identity",
                                {**meta, "sample": k, "seed": sub_seed},
                                check_resolvent_identity,
                                alpha,
                                beta,
                                f,
                                pcfg,
                            )
                        )
            if "lq_contraction" in wanted:
                for a_index, alpha in enumerate(CONTRACTION_ALPHAS):
                    tasks.append(
                        _task(
                            "lq_contraction",
                            meta,
                            check_lq_contractions,
                            grid,
                            alpha,
                            (2, 4, 8, np.inf),
                            n_samples,
                            pcfg,
                            seed=sub_seed + 1 + 10 * a_index,
                        )
                    )
            if "best_estimate" in wanted:
                tasks.append(
                    _task("best_estimate", meta, check_best_estimate, grid, p, n_estimate, pcfg, seed=sub_seed + 2)
                )
            if "resolvent_convergence" in wanted:
                tasks.append(
                    _task(
                        "resolvent_convergence",
                        meta,
                        check_resolvent_convergence,
                        1.0,
                        (0.1, 0.03, 0.01, 0.003),
                        _smooth_data(grid),
                        pcfg,
                    )
                )
            if "scaling_law" in wanted:
                tasks.append(_task("scaling_law", meta, check_scaling_law, p, (0.1, 2.0, 10.0), _smooth_data(grid), pcfg))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda t: t(), tasks))
    else:
        results = [t() for t in tasks]
    reports = []
    for r in results:
        reports += r
    return reports
