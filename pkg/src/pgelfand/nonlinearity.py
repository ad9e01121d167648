"""Locally Lipschitz right-hand sides ``g: R^d -> R^d``.

Each component is given by a short text spec::

    exp            e^u
    sin            sin(u)
    const[:c]      c (default 1)
    zero           0
    power:gamma    |u|^gamma
    poly:c0,c1,..  c0 + c1 u + c2 u^2 + ...
    linear:a1,..   a1 u_1 + a2 u_2 + ...   (couples all components)

Scalar kinds act on the component's own variable unless a suffix ``@j``
(1-based) selects another one, e.g. ``exp@2`` is ``e^{u_2}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

__all__ = ["Term", "Nonlinearity", "parse_term"]

_SCALAR_KINDS = ("exp", "sin", "const", "zero", "power", "poly")


@dataclass(frozen=True)
class Term:
    kind: str
    params: tuple = ()
    arg: int | None = None  # 0-based variable index for scalar kinds

    def spec(self) -> str:
        text = self.kind
        if self.params:
            text += ":" + ",".join(repr(float(c)) for c in self.params)
        if self.arg is not None:
            text += f"@{self.arg + 1}"
        return text


def parse_term(text: str) -> Term:
    raw = text.strip()
    body, at, target = raw.partition("@")
    kind, _, args = body.partition(":")
    kind = kind.strip().lower()
    try:
        params = tuple(float(a) for a in args.split(",") if a.strip()) if args else ()
    except ValueError as exc:
        raise ConfigurationError(f"bad parameters in nonlinearity {raw!r}") from exc
    arg = None
    if at:
        if kind == "linear":
            raise ConfigurationError("linear terms already couple all components; drop the @ suffix")
        try:
            arg = int(target) - 1
        except ValueError as exc:
            raise ConfigurationError(f"bad component index in {raw!r}") from exc
        if arg < 0:
            raise ConfigurationError(f"component indices are 1-based, got {raw!r}")

    if kind == "exp" or kind == "sin" or kind == "zero":
        if params:
            raise ConfigurationError(f"{kind} takes no parameters")
    elif kind == "const":
        params = params or (1.0,)
        if len(params) != 1:
            raise ConfigurationError("const takes one value")
    elif kind == "power":
        if len(params) != 1 or params[0] <= 0:
            raise ConfigurationError("power needs one positive exponent, e.g. power:2")
    elif kind == "poly":
        if not params:
            raise ConfigurationError("poly needs coefficients, e.g. poly:0,0,1")
    elif kind == "linear":
        if not params:
            raise ConfigurationError("linear needs one coefficient per component")
    else:
        raise ConfigurationError(f"unknown nonlinearity kind {kind!r}")
    return Term(kind, params, arg)


def _scalar(term: Term, x):
    kind, c = term.kind, term.params
    if kind == "exp":
        with np.errstate(over="ignore"):
            return np.exp(x)
    if kind == "sin":
        return np.sin(x)
    if kind == "const":
        return np.full_like(x, c[0])
    if kind == "zero":
        return np.zeros_like(x)
    if kind == "power":
        return np.abs(x) ** c[0]
    if kind == "poly":
        return np.polynomial.polynomial.polyval(x, c)
    raise AssertionError(kind)


def _scalar_lipschitz(term: Term, R: float) -> float:
    kind, c = term.kind, term.params
    if kind == "exp":
        return math.exp(R)
    if kind == "sin":
        return 1.0
    if kind in ("const", "zero"):
        return 0.0
    if kind == "power":
        gamma = c[0]
        if gamma < 1:
            return math.inf
        return gamma * R ** (gamma - 1) if gamma > 1 else 1.0
    if kind == "poly":
        return sum(k * abs(ck) * R ** (k - 1) for k, ck in enumerate(c) if k > 0)
    raise AssertionError(kind)


class Nonlinearity:
    """Component-wise right-hand side of the system ``-Delta_{p_i} u_i = lam g_i(u)``."""

    def __init__(self, terms):
        terms = [parse_term(t) if isinstance(t, str) else t for t in terms]
        if not terms:
            raise ConfigurationError("need at least one nonlinearity component")
        d = len(terms)
        fixed = []
        for i, t in enumerate(terms):
            if t.kind == "linear":
                if len(t.params) != d:
                    raise ConfigurationError(
                        f"component {i + 1}: linear needs {d} coefficients, got {len(t.params)}"
                    )
            else:
                arg = i if t.arg is None else t.arg
                if arg >= d:
                    raise ConfigurationError(f"component {i + 1} refers to u_{arg + 1} but d = {d}")
                t = Term(t.kind, t.params, arg)
            fixed.append(t)
        self.terms = tuple(fixed)

    @classmethod
    def parse(cls, specs):
        if isinstance(specs, str):
            specs = [specs]
        return cls(list(specs))

    @property
    def d(self) -> int:
        return len(self.terms)

    def specs(self):
        return [t.spec() for t in self.terms]

    def __call__(self, u: np.ndarray) -> np.ndarray:
        """Evaluate on values of shape ``(d, n)``; returns the same shape."""
        u = np.asarray(u, dtype=float)
        out = np.empty_like(u)
        for i, t in enumerate(self.terms):
            if t.kind == "linear":
                out[i] = np.asarray(t.params) @ u
            else:
                out[i] = _scalar(t, u[t.arg])
        return out

    def depends_on_u(self) -> bool:
        return any(t.kind not in ("const", "zero") for t in self.terms)

    def lipschitz_on(self, R: float) -> float:
        """Upper bound for the Lipschitz constant on the sup-norm ball of radius ``R``."""
        if R < 0:
            raise ConfigurationError("radius must be non-negative")
        bounds = []
        for t in self.terms:
            if t.kind == "linear":
                bounds.append(float(np.sum(np.abs(t.params))))
            else:
                bounds.append(_scalar_lipschitz(t, R))
        return max(bounds)

    def __repr__(self):
        return f"Nonlinearity({self.specs()})"
