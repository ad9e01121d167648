"""Discrete p-Dirichlet energy, the p-Laplacian and its inverses.

The energy of a nodal field ``u`` is

    E_eps(u) = sum_c |c| (|grad u|_c^2 + eps^2)^(p/2) / p

with piecewise-constant element gradients.  Its nodal gradient is the weak
form of ``-Delta_p u`` tested against hat functions.  Both the Dirichlet
inverse ``(-Delta_p)^-1`` and the resolvent ``J_alpha = (I - alpha Delta_p)^-1``
are computed by minimizing a strictly convex functional with damped Newton
iterations, driving ``eps`` down geometrically.

``eps`` is measured relative to a data scale: ``|f|^(1/(p-1))`` for the
Dirichlet problem and ``|f|`` for the resolvent.  With that choice the
regularized Dirichlet solve is exactly homogeneous, since the regularized flux
``(g^2 + eps^2)^((p-2)/2) g`` has degree ``p - 1`` jointly in ``(g, eps)``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, NumericalError
from .geometry import Field

__all__ = [
    "Regularization",
    "SolveConfig",
    "SolveReport",
    "energy",
    "energy_gradient",
    "energy_hessian",
    "solve_dirichlet",
    "resolvent",
    "scale_solution",
    "dirichlet_scale",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Regularization:
    """Geometric schedule ``eps_start -> eps_end`` in ``steps`` stages."""

    eps_start: float = 1e-1
    eps_end: float = 1e-8
    steps: int = 8

    def __post_init__(self):
        if not (self.eps_start >= self.eps_end > 0):
            raise ConfigurationError(f"need eps_start >= eps_end > 0, got {self.eps_start}, {self.eps_end}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ConfigurationError(f"regularization needs at least one stage, got {self.steps}")

    def schedule(self) -> np.ndarray:
        if self.steps == 1:
            return np.array([self.eps_end])
        return np.geomspace(self.eps_start, self.eps_end, int(self.steps))


@dataclass(frozen=True)
class SolveConfig:
    p: float = 2.0
    reg: Regularization = field(default_factory=Regularization)
    grad_tol: float = 1e-9
    max_newton_iters: int = 100
    armijo_slope: float = 1e-4
    backtrack: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.p) and self.p > 1):
            raise ConfigurationError(f"exponent p must exceed 1, got {self.p}")
        if not self.grad_tol > 0:
            raise ConfigurationError(f"grad_tol must be positive, got {self.grad_tol}")
        if not 0 < self.armijo_slope <= 0.5:
            raise ConfigurationError(f"Armijo slope fraction must lie in (0, 1/2], got {self.armijo_slope}")
        if not 0 < self.backtrack < 1:
            raise ConfigurationError(f"backtracking factor must lie in (0, 1), got {self.backtrack}")
        if int(self.max_newton_iters) != self.max_newton_iters or self.max_newton_iters < 1:
            raise ConfigurationError("max_newton_iters must be a positive integer")

    def with_(self, **changes) -> "SolveConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SolveReport:
    stage_iterations: list = field(default_factory=list)
    grad_norm: float = 0.0
    strong_residual: float = 0.0
    energy: float = 0.0
    converged: bool = True
    tolerance: float = 0.0
    message: str = ""

    @property
    def iterations(self) -> int:
        return int(sum(self.stage_iterations))

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# energy and derivatives


def _cell_gradients(grid, values):
    g = grid.gradient_operator @ values
    return g.reshape(grid.dimension, grid.n_cells)


def _energy_values(grid, values, p, eps):
    g = _cell_gradients(grid, values)
    s = np.einsum("kc,kc->c", g, g)
    return float(np.dot(grid.cell_measure, (s + eps * eps) ** (0.5 * p)) / p)


def _gradient_values(grid, values, p, eps):
    g = _cell_gradients(grid, values)
    s = np.einsum("kc,kc->c", g, g) + eps * eps
    if eps > 0 or p >= 2:
        w = s ** (0.5 * p - 1.0)
    else:
        # |g|^(p-2) g -> 0 as g -> 0 for every p > 1
        w = np.zeros_like(s)
        pos = s > 0
        w[pos] = s[pos] ** (0.5 * p - 1.0)
    flux = (grid.cell_measure * w) * g
    return grid.gradient_operator.T @ flux.ravel()


def _hessian_matrix(grid, values, p, eps):
    g = _cell_gradients(grid, values)
    s = np.einsum("kc,kc->c", g, g) + eps * eps
    m = grid.cell_measure
    w = m * s ** (0.5 * p - 1.0)
    if p == 2.0:
        # linear case: no rank-one part, and s may vanish when eps = 0
        w2 = np.zeros_like(s)
    else:
        w2 = m * (p - 2.0) * s ** (0.5 * p - 2.0)
    G = grid.gradient_operator
    if grid.dimension == 1:
        B = sp.diags(w + w2 * g[0] ** 2)
    else:
        d11 = sp.diags(w + w2 * g[0] ** 2)
        d22 = sp.diags(w + w2 * g[1] ** 2)
        d12 = sp.diags(w2 * g[0] * g[1])
        B = sp.bmat([[d11, d12], [d12, d22]], format="csr")
    return (G.T @ B @ G).tocsc()


def energy(u: Field, p: float, eps: float = 0.0) -> float:
    """Regularized p-Dirichlet energy; ``eps = 0`` gives the plain discrete energy."""
    if eps < 0:
        raise ConfigurationError("eps must be non-negative")
    return _energy_values(u.grid, u.values, p, eps)


def energy_gradient(u: Field, p: float, eps: float = 0.0) -> Field:
    """Nodal gradient of :func:`energy`, i.e. the weak-form ``-Delta_p u``."""
    if eps < 0:
        raise ConfigurationError("eps must be non-negative")
    return Field(u.grid, _gradient_values(u.grid, u.values, p, eps))


def energy_hessian(u: Field, p: float, eps: float) -> sp.csc_matrix:
    """Sparse Hessian of the regularized energy (requires ``eps > 0`` unless ``p == 2``)."""
    if eps <= 0 and p != 2:
        raise ConfigurationError("the Hessian needs eps > 0 for p != 2")
    return _hessian_matrix(u.grid, u.values, p, eps)


# ---------------------------------------------------------------------------
# minimization


class _Problem:
    """F(u) = a * E_eps(u) + (c/2) <u, u>_M - <f, u>_M."""

    def __init__(self, grid, f, p, a, c):
        self.grid = grid
        self.p = p
        self.a = a
        self.c = c
        self.mass = grid.mass
        self.load = grid.mass * f

    def value(self, u, eps):
        quad = 0.5 * self.c * np.dot(self.mass, u * u) if self.c else 0.0
        return self.a * _energy_values(self.grid, u, self.p, eps) + quad - np.dot(self.load, u)

    def gradient(self, u, eps):
        grad = self.a * _gradient_values(self.grid, u, self.p, eps) - self.load
        if self.c:
            grad += self.c * self.mass * u
        return grad

    def hessian(self, u, eps):
        H = self.a * _hessian_matrix(self.grid, u, self.p, eps)
        if self.c:
            H = H + sp.diags(self.c * self.mass)
        return H.tocsc()

    def residual(self, grad):
        # strong-form residual: divide out the lumped masses
        return float(np.max(np.abs(grad / self.mass), initial=0.0))


def _newton_stage(problem, u, eps, target, cfg, max_iters):
    """Damped Newton at fixed eps.

    Iterates until the strong-form residual drops to ``target`` or progress
    stops: three steps in a row where neither the energy decreases beyond
    rounding nor the residual improves on its best value by half.  Returns
    ``(u, iterations, gradient)``.
    """
    grad = problem.gradient(u, eps)
    res = problem.residual(grad)
    stalled = 0
    best = res
    F = problem.value(u, eps)
    it = 0
    while res > target and it < max_iters and stalled < 3:
        it += 1
        H = problem.hessian(u, eps)
        try:
            d = spla.spsolve(H, -grad)
        except RuntimeError:
            d = None
        slope = np.dot(grad, d) if d is not None else 0.0
        if d is None or not np.all(np.isfinite(d)) or not slope < 0:
            # not a descent direction: fall back to diagonally scaled steepest descent
            diag = H.diagonal()
            diag = np.where(diag > 0, diag, 1.0)
            d = -grad / diag
            slope = np.dot(grad, d)
        slack = 64 * np.finfo(float).eps * (abs(F) + abs(np.dot(problem.load, u)))
        t = _line_search(problem, u, d, slope, eps)
        while True:
            trial = u + t * d
            F_trial = problem.value(trial, eps)
            if not np.isfinite(F_trial):
                raise NumericalError("non-finite energy in line search")
            # Armijo test, with room for rounding once the decrease is at machine level
            if F_trial <= F + cfg.armijo_slope * t * slope + slack:
                break
            t *= cfg.backtrack
            if t < 1e-14:
                return u, it, grad
        decreased = F - F_trial > slack
        u = trial
        F = F_trial
        grad = problem.gradient(u, eps)
        res = problem.residual(grad)
        if decreased or res <= 0.5 * best:
            stalled = 0
        else:
            stalled += 1
        best = min(best, res)
    return u, it, grad


def _line_search(problem, u, d, slope, eps, iters=30):
    """Approximate minimizer of the convex restriction t -> F(u + t d).

    Brackets the root of the directional derivative, doubling from t = 1,
    then refines it with safeguarded secant steps.
    """
    def dphi(t):
        return float(np.dot(problem.gradient(u + t * d, eps), d))

    lo, d_lo = 0.0, slope
    hi, d_hi = 1.0, dphi(1.0)
    if d_hi <= 0:
        # full step still descending; stretch a little but keep Newton's t = 1 near convergence
        for _ in range(8):
            if d_hi > 0 or d_hi >= 0.5 * slope:
                break
            lo, d_lo = hi, d_hi
            hi *= 2.0
            d_hi = dphi(hi)
        if d_hi <= 0:
            return hi
    if d_hi <= 0.5 * abs(slope):
        # mild overshoot: the full step is good enough
        return hi if hi == 1.0 else lo
    for _ in range(iters):
        t = lo - d_lo * (hi - lo) / (d_hi - d_lo)
        # keep the secant point away from the bracket ends
        width = hi - lo
        t = min(max(t, lo + 0.05 * width), hi - 0.05 * width)
        dt = dphi(t)
        if abs(dt) <= 1e-3 * abs(slope):
            return t
        if dt < 0:
            lo, d_lo = t, dt
        else:
            hi, d_hi = t, dt
        if hi - lo <= 1e-12 * hi:
            break
    return lo if lo > 0 else hi


def _minimize(problem, u0, tol, cfg, eps_scale, warm):
    schedule = cfg.reg.schedule() * eps_scale
    report = SolveReport(tolerance=tol)
    u = np.zeros(problem.grid.n_interior) if u0 is None else np.array(u0, dtype=float)
    if problem.p == 2.0:
        # eps only adds a constant to the energy: a single stage suffices
        schedule = schedule[-1:]
    elif warm:
        # warm start near the answer: try the final stage first
        u_try, it, grad = _newton_stage(problem, u, schedule[-1], tol, cfg, cfg.max_newton_iters)
        report.stage_iterations.append(it)
        if _weak(grad) <= tol:
            return _finish(problem, u_try, schedule[-1], grad, report)
    data = max(1.0, np.max(np.abs(problem.load / problem.mass), initial=0.0))
    loose = max(tol, 1e-6 * data)
    for k, eps in enumerate(schedule):
        last = k == len(schedule) - 1
        u, it, grad = _newton_stage(problem, u, eps, tol if last else loose, cfg, cfg.max_newton_iters)
        report.stage_iterations.append(it)
    return _finish(problem, u, schedule[-1], grad, report)


def _weak(grad):
    return float(np.max(np.abs(grad), initial=0.0))


def _finish(problem, u, eps, grad, report):
    if not np.all(np.isfinite(u)):
        raise NumericalError("solver produced non-finite values")
    report.grad_norm = _weak(grad)
    report.strong_residual = problem.residual(grad)
    report.energy = float(_energy_values(problem.grid, u, problem.p, eps))
    report.converged = bool(report.grad_norm <= report.tolerance)
    report.message = "converged" if report.converged else "gradient tolerance not reached"
    if not report.converged:
        log.debug("solve stopped at gradient %.3e > %.3e", report.grad_norm, report.tolerance)
    return u, report


def dirichlet_scale(f_sup: float, p: float) -> float:
    """Gradient scale of ``(-Delta_p)^-1 f`` for data of sup-norm ``f_sup``."""
    return f_sup ** (1.0 / (p - 1.0))


def solve_dirichlet(f: Field, cfg: SolveConfig, u0: Field | None = None, scale: float | None = None):
    """Compute ``(-Delta_p)^-1 f`` with zero Dirichlet data.

    Returns ``(u, report)``.  ``report.converged`` is true when the energy
    gradient residual ``|grad E(u) - M f|_inf`` is at most
    ``grad_tol * max(1, |f|_inf)``; Newton keeps iterating past that point
    until the mass-normalized residual reaches the same bound or stalls.
    ``u0`` warm-starts the iteration; ``scale`` overrides the data scale
    that multiplies the eps schedule.
    """
    grid = f.grid
    fv = np.asarray(f.values, dtype=float)
    if not np.all(np.isfinite(fv)):
        raise NumericalError("non-finite source term")
    f_sup = float(np.max(np.abs(fv), initial=0.0))
    tol = cfg.grad_tol * max(1.0, f_sup)
    if f_sup == 0.0:
        return Field(grid), SolveReport(stage_iterations=[0], tolerance=tol, message="zero data")
    if scale is None:
        scale = dirichlet_scale(f_sup, cfg.p)
    problem = _Problem(grid, fv, cfg.p, a=1.0, c=0.0)
    start = None if u0 is None else u0.values
    u, report = _minimize(problem, start, tol, cfg, scale, warm=u0 is not None)
    return Field(grid, u), report


def resolvent(alpha: float, f: Field, cfg: SolveConfig, u0: Field | None = None, scale: float | None = None):
    """Compute ``J_alpha f``, the solution of ``u - alpha Delta_p u = f``.

    Uses the lumped L^2 pairing, so the zeroth-order term is diagonal.
    Returns ``(u, report)`` with the same residual contract as
    :func:`solve_dirichlet`.
    """
    if not alpha > 0:
        raise ConfigurationError(f"resolvent parameter must be positive, got {alpha}")
    grid = f.grid
    fv = np.asarray(f.values, dtype=float)
    if not np.all(np.isfinite(fv)):
        raise NumericalError("non-finite data")
    f_sup = float(np.max(np.abs(fv), initial=0.0))
    tol = cfg.grad_tol * max(1.0, f_sup)
    if f_sup == 0.0:
        return Field(grid), SolveReport(stage_iterations=[0], tolerance=tol, message="zero data")
    if scale is None:
        scale = f_sup
    problem = _Problem(grid, fv, cfg.p, a=float(alpha), c=1.0)
    start = fv if u0 is None else u0.values
    u, report = _minimize(problem, start, tol, cfg, scale, warm=u0 is not None)
    return Field(grid, u), report


def scale_solution(u: Field, lam: float, p: float) -> Field:
    """Multiply by ``lam^(1/(p-1))``, the factor relating ``(-Delta_p)^-1(lam f)`` to ``(-Delta_p)^-1 f``.

    Negative ``lam`` is accepted only when the exponent is an integer; the
    operator is odd, so the result is ``-|lam|^(1/(p-1)) u``.
    """
    e = 1.0 / (p - 1.0)
    if lam < 0:
        if abs(e - round(e)) > 1e-12:
            raise ConfigurationError(f"lambda < 0 with non-integer exponent 1/(p-1) = {e:g}")
        return u * (-(abs(lam) ** e))
    return u * (lam**e)
