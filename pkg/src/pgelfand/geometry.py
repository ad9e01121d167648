"""Structured grids on bounded open sets, nodal fields and lumped norms.

A :class:`DomainGrid` is a uniform lattice (1-D interval or 2-D box) together
with a boolean mask selecting the interior nodes.  Unknowns live on interior
nodes only; every other node carries the homogeneous Dirichlet value 0.

In 2-D each square lattice cell is split along its lower-left to upper-right
diagonal into two P1 triangles.  Only elements with at least one interior
vertex are stored, since all others carry a zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, EmptyDomainError, MaskFileError

__all__ = [
    "DomainGrid",
    "Field",
    "SystemField",
    "build_interval",
    "build_mask_domain",
    "read_mask_file",
    "norm",
]


@dataclass(frozen=True, eq=False)
class DomainGrid:
    """Immutable discretization of a bounded open set.

    Attributes
    ----------
    dimension : int
        1 or 2.
    h : float
        Mesh width.
    shape : tuple of int
        Node counts per axis, ``(nx,)`` in 1-D and ``(ny, nx)`` in 2-D.
    origin : tuple of float
        Coordinates of node 0 along each axis (x first).
    interior_mask : ndarray of bool
        One flag per lattice node, same shape as ``shape``.
    interior_index : ndarray of int
        Flat lattice ids of the interior nodes; position in this array is the
        dense unknown index.
    cells : ndarray of int, shape (n_cells, dimension + 1)
        Flat lattice ids of element vertices.
    cell_measure : ndarray of float
        Length or area of each element.
    description : str
        Descriptor the grid was built from (used in manifests).
    """

    dimension: int
    h: float
    shape: tuple
    origin: tuple
    interior_mask: np.ndarray
    interior_index: np.ndarray
    cells: np.ndarray
    cell_measure: np.ndarray
    description: str = ""
    _lookup: np.ndarray = field(repr=False, default=None)
    _grad: sp.csr_matrix = field(repr=False, default=None)
    _mass: np.ndarray = field(repr=False, default=None)

    @property
    def n_interior(self) -> int:
        return int(self.interior_index.size)

    @property
    def n_cells(self) -> int:
        return int(self.cells.shape[0])

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def lattice_to_interior(self) -> np.ndarray:
        """Map from flat lattice id to dense interior index (-1 if exterior)."""
        return self._lookup

    @property
    def mass(self) -> np.ndarray:
        """Lumped nodal masses of the interior nodes."""
        return self._mass

    @property
    def gradient_operator(self) -> sp.csr_matrix:
        """Sparse map from interior values to per-element gradients.

        Rows are ordered component-major: rows ``k * n_cells + c`` hold the
        k-th partial derivative on element ``c``.
        """
        return self._grad

    @property
    def area(self) -> float:
        return float(self.cell_measure.sum())

    def lattice_indices(self) -> np.ndarray:
        """Integer lattice coordinates of interior nodes, shape (n, dimension), x first."""
        if self.dimension == 1:
            return self.interior_index[:, None].copy()
        ny, nx = self.shape
        j, i = np.divmod(self.interior_index, nx)
        return np.column_stack([i, j])

    def coordinates(self) -> np.ndarray:
        """Physical coordinates of interior nodes, shape (n, dimension)."""
        return np.asarray(self.origin) + self.h * self.lattice_indices()

    def expand(self, values: np.ndarray) -> np.ndarray:
        """Scatter interior values onto the full lattice (zeros elsewhere)."""
        full = np.zeros(self.n_nodes)
        full[self.interior_index] = values
        return full.reshape(self.shape)

    def evaluate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate the piecewise-linear interpolant at arbitrary points (1-D only)."""
        if self.dimension != 1:
            raise NotImplementedError("point evaluation is only provided in 1-D")
        xs = self.origin[0] + self.h * np.arange(self.shape[0])
        return np.interp(np.asarray(points, dtype=float), xs, self.expand(values))


def _finalize(dimension, h, shape, origin, mask, cells, measure, description, orientation=None):
    mask = np.asarray(mask, dtype=bool)
    mask.setflags(write=False)
    interior = np.flatnonzero(mask.ravel())
    if interior.size == 0:
        raise EmptyDomainError(f"domain {description!r} has no interior nodes")
    lookup = np.full(mask.size, -1, dtype=np.int64)
    lookup[interior] = np.arange(interior.size)

    # keep elements that touch at least one interior node
    keep = (lookup[cells] >= 0).any(axis=1)
    cells = np.ascontiguousarray(cells[keep])
    measure = np.ascontiguousarray(measure[keep], dtype=float)
    if orientation is not None:
        orientation = orientation[keep]

    grad = _gradient_matrix(dimension, h, cells, lookup, interior.size, orientation)

    mass = np.zeros(interior.size)
    local = lookup[cells]
    share = np.repeat(measure / (dimension + 1), dimension + 1).reshape(local.shape)
    inside = local >= 0
    np.add.at(mass, local[inside], share[inside])

    for arr in (interior, lookup, cells, measure, mass):
        arr.setflags(write=False)
    return DomainGrid(
        dimension=dimension,
        h=float(h),
        shape=tuple(int(s) for s in shape),
        origin=tuple(float(o) for o in origin),
        interior_mask=mask,
        interior_index=interior,
        cells=cells,
        cell_measure=measure,
        description=description,
        _lookup=lookup,
        _grad=grad,
        _mass=mass,
    )


def _gradient_matrix(dimension, h, cells, lookup, n, orientation):
    n_cells = cells.shape[0]
    rows, cols, vals = [], [], []

    def difference(component, plus, minus):
        # d/dx_k on every element equals (u[plus] - u[minus]) / h
        r = component * n_cells + np.arange(n_cells)
        for nodes, sign in ((plus, 1.0), (minus, -1.0)):
            idx = lookup[nodes]
            ok = idx >= 0
            rows.append(r[ok])
            cols.append(idx[ok])
            vals.append(np.full(ok.sum(), sign / h))

    if dimension == 1:
        difference(0, cells[:, 1], cells[:, 0])
    else:
        # vertex order: lower triangle (LL, LR, UR), upper triangle (LL, UR, UL)
        lower = orientation == 0
        v0, v1, v2 = cells[:, 0], cells[:, 1], cells[:, 2]
        # the x-step always ends at v1 and the y-step at v2
        difference(0, v1, np.where(lower, v0, v2))
        difference(1, v2, np.where(lower, v1, v0))
    G = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(dimension * n_cells, n),
    )
    G.sum_duplicates()
    return G


def build_interval(length: float, n_nodes: int) -> DomainGrid:
    """Uniform grid on ``(0, length)`` with ``n_nodes`` nodes, both endpoints exterior."""
    if not np.isfinite(length) or length <= 0:
        raise ConfigurationError(f"interval length must be positive, got {length}")
    if int(n_nodes) != n_nodes or n_nodes < 3:
        raise ConfigurationError(f"interval needs at least 3 nodes, got {n_nodes}")
    n_nodes = int(n_nodes)
    h = length / (n_nodes - 1)
    mask = np.ones(n_nodes, dtype=bool)
    mask[[0, -1]] = False
    k = np.arange(n_nodes - 1)
    cells = np.column_stack([k, k + 1])
    measure = np.full(n_nodes - 1, h)
    return _finalize(1, h, (n_nodes,), (0.0,), mask, cells, measure, f"interval:{length:g}:{n_nodes}")


def _triangulate(ny, nx, h):
    jj, ii = np.meshgrid(np.arange(ny - 1), np.arange(nx - 1), indexing="ij")
    ll = (jj * nx + ii).ravel()
    lr, ul = ll + 1, ll + nx
    ur = ul + 1
    cells = np.empty((2 * ll.size, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([ll, lr, ur])
    cells[1::2] = np.column_stack([ll, ur, ul])
    # 0 marks the lower-right triangle, 1 the upper-left one
    orientation = np.tile([0, 1], ll.size)
    return cells, np.full(cells.shape[0], 0.5 * h * h), orientation


def _box_grid(inside: Callable, lo: float, hi: float, resolution: int, description: str) -> DomainGrid:
    n = resolution + 1
    h = (hi - lo) / resolution
    t = lo + h * np.arange(n)
    X, Y = np.meshgrid(t, t, indexing="xy")
    mask = np.asarray(inside(X, Y), dtype=bool)
    mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = False
    cells, measure, orientation = _triangulate(n, n, h)
    return _finalize(2, h, (n, n), (lo, lo), mask, cells, measure, description, orientation)


def read_mask_file(path) -> np.ndarray:
    """Read an ASCII mask ('#' interior, '.' exterior); first line is the top row."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MaskFileError(f"cannot read mask file {path}: {exc}") from exc
    rows = [line.rstrip("\r\n") for line in text.splitlines()]
    while rows and rows[-1] == "":
        rows.pop()
    if not rows:
        raise MaskFileError(f"{path}: mask file is empty")
    width = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise MaskFileError(f"{path}:{lineno}: ragged row (length {len(row)}, expected {width})")
        bad = set(row) - {"#", "."}
        if bad:
            raise MaskFileError(f"{path}:{lineno}: unexpected characters {sorted(bad)!r}")
    return np.array([[c == "#" for c in row] for row in rows[::-1]], dtype=bool)


def _parse_floats(parts, defaults, kind):
    try:
        values = [float(x) for x in parts]
    except ValueError as exc:
        raise ConfigurationError(f"bad parameters for {kind}: {parts}") from exc
    return values + list(defaults[len(values):])


def build_mask_domain(spec: str, resolution: int) -> DomainGrid:
    """Build a 2-D grid from a shape descriptor.

    ``spec`` is one of ``square[:side]``, ``disc[:radius]``,
    ``annulus[:r_in:r_out]``, ``lshape`` or ``file:PATH``.  For the analytic
    shapes ``resolution`` is the number of lattice cells across the bounding
    box; for mask files it sets ``h = 1 / resolution``.
    """
    if int(resolution) != resolution or resolution < 4:
        raise ConfigurationError(f"resolution must be an integer >= 4, got {resolution}")
    resolution = int(resolution)
    kind, _, rest = str(spec).partition(":")
    kind = kind.strip().lower()
    parts = [s for s in rest.split(":") if s] if rest else []
    desc = f"{spec}@{resolution}"

    if kind == "square":
        (side,) = _parse_floats(parts, [1.0], kind)
        if side <= 0:
            raise ConfigurationError("square side must be positive")
        return _box_grid(lambda X, Y: np.ones_like(X, dtype=bool), 0.0, side, resolution, desc)
    if kind == "disc":
        (radius,) = _parse_floats(parts, [1.0], kind)
        if radius <= 0:
            raise ConfigurationError("disc radius must be positive")
        return _box_grid(lambda X, Y: X**2 + Y**2 < radius**2, -radius, radius, resolution, desc)
    if kind == "annulus":
        r_in, r_out = _parse_floats(parts, [0.5, 1.0], kind)
        if not 0 <= r_in < r_out:
            raise ConfigurationError("annulus needs 0 <= r_in < r_out")
        return _box_grid(
            lambda X, Y: (X**2 + Y**2 < r_out**2) & (X**2 + Y**2 > r_in**2), -r_out, r_out, resolution, desc
        )
    if kind == "lshape":
        return _box_grid(lambda X, Y: ~((X >= 0) & (Y <= 0)), -1.0, 1.0, resolution, desc)
    if kind == "file":
        if not rest:
            raise ConfigurationError("file descriptor needs a path: file:PATH")
        nodes = read_mask_file(rest)
        padded = np.pad(nodes, 1, constant_values=False)
        ny, nx = padded.shape
        h = 1.0 / resolution
        cells, measure, orientation = _triangulate(ny, nx, h)
        return _finalize(2, h, (ny, nx), (0.0, 0.0), padded, cells, measure, desc, orientation)
    raise ConfigurationError(f"unknown domain kind {kind!r}")


class Field:
    """Real values on the interior nodes of a grid; zero on the complement."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: DomainGrid, values=None):
        if values is None:
            values = np.zeros(grid.n_interior)
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_interior,):
            raise ConfigurationError(f"field needs {grid.n_interior} values, got shape {values.shape}")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid):
        return cls(grid)

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(*coords)`` at interior nodes (``fn(x)`` or ``fn(x, y)``)."""
        xy = grid.coordinates()
        vals = np.broadcast_to(np.asarray(fn(*xy.T), dtype=float), (grid.n_interior,))
        return cls(grid, vals.copy())

    def full(self):
        return self.grid.expand(self.values)

    def _wrap(self, values):
        return Field(self.grid, values)

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid is not self.grid:
                raise ConfigurationError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __rsub__(self, other):
        return self._wrap(self._other(other) - self.values)

    def __mul__(self, c):
        return self._wrap(self.values * self._other(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self._wrap(self.values / c)

    def __neg__(self):
        return self._wrap(-self.values)

    def __abs__(self):
        return self._wrap(np.abs(self.values))

    def __repr__(self):
        return f"Field(n={self.values.size}, sup={np.max(np.abs(self.values), initial=0.0):.6g})"


class SystemField:
    """``d`` fields sharing one grid, stored as a ``(d, n_interior)`` array."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: DomainGrid, values):
        values = np.array(values, dtype=float, ndmin=2)
        if values.ndim != 2 or values.shape[1] != grid.n_interior:
            raise ConfigurationError(f"system field needs shape (d, {grid.n_interior}), got {values.shape}")
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid, d):
        return cls(grid, np.zeros((d, grid.n_interior)))

    @classmethod
    def from_components(cls, components: Sequence[Field]):
        grids = {id(c.grid) for c in components}
        if len(grids) != 1:
            raise ConfigurationError("all components must share one grid")
        return cls(components[0].grid, np.stack([c.values for c in components]))

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def components(self):
        return [Field(self.grid, v) for v in self.values]

    def component(self, i) -> Field:
        return Field(self.grid, self.values[i])

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values), initial=0.0))

    def __sub__(self, other):
        return SystemField(self.grid, self.values - other.values)

    def __repr__(self):
        return f"SystemField(d={self.d}, n={self.grid.n_interior}, sup={self.sup_norm():.6g})"


def norm(u, q=np.inf) -> float:
    """Lumped L^q norm of a :class:`Field` (or of a raw array on ``u.grid``).

    ``q = inf`` gives the nodal maximum; finite ``q >= 1`` gives
    ``(sum_i m_i |u_i|^q)^(1/q)`` with lumped masses ``m_i``.
    """
    if q < 1:
        raise ConfigurationError(f"norm exponent must be >= 1, got {q}")
    values = np.abs(u.values)
    if values.size == 0:
        return 0.0
    top = float(values.max())
    if np.isinf(q):
        return top
    if top == 0.0:
        return 0.0
    # factor out the max so large q does not overflow
    return top * float(np.sum(u.grid.mass * (values / top) ** q)) ** (1.0 / q)
