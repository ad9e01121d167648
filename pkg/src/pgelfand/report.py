"""Stable on-disk formats for fields, branches and structured reports.

CSV is used for numeric tables and JSON for structured reports.  Floats are
written with 17 significant digits, which round-trips every 64-bit value
exactly, and column order is fixed, so identical inputs give identical bytes.
"""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .errors import OutputError
from .fixedpoint import Branch, energy_seminorm
from .geometry import DomainGrid, Field, SystemField

__all__ = [
    "format_float",
    "export_field",
    "import_field",
    "export_branch",
    "read_branch_summary",
    "to_jsonable",
    "write_json",
    "RunManifest",
    "BRANCH_COLUMNS",
]

BRANCH_COLUMNS = ("lambda", "sup_norm", "energy_seminorm", "picard_iters", "contraction_estimate")
TRAILER_PREFIX = "# termination: "


def format_float(x) -> str:
    """Shortest-free fixed format: 17 significant digits, ``nan``/``inf`` spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def _write_text(path, text: str) -> Path:
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}", path) from exc
    return path


def _read_text(path) -> str:
    path = Path(path)
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror or exc}", path) from exc


# ---------------------------------------------------------------------------
# fields


def _field_columns(grid: DomainGrid, d: int | None):
    cols = ["i", "x"] if grid.dimension == 1 else ["i", "j", "x", "y"]
    if d is None:
        return cols + ["value"]
    return cols + [f"value_{k + 1}" for k in range(d)]


def export_field(u, path) -> Path:
    """Write a :class:`Field` or :class:`SystemField` as CSV.

    Columns are ``i, j, x, y, value`` in 2-D and ``i, x, value`` in 1-D,
    one row per interior node in dense index order.  System fields get
    ``value_1 ... value_d``.  ``i, j`` are integer lattice coordinates.
    """
    if isinstance(u, SystemField):
        values, d = u.values, u.d
    elif isinstance(u, Field):
        values, d = u.values[None, :], None
    else:
        raise TypeError(f"expected Field or SystemField, got {type(u).__name__}")
    grid = u.grid
    idx = grid.lattice_indices()
    xy = grid.coordinates()
    buf = io.StringIO()
    buf.write(",".join(_field_columns(grid, d)) + "\n")
    for n in range(grid.n_interior):
        row = [str(int(k)) for k in idx[n]]
        row += [format_float(c) for c in xy[n]]
        row += [format_float(v) for v in values[:, n]]
        buf.write(",".join(row) + "\n")
    return _write_text(path, buf.getvalue())


def import_field(path, grid: DomainGrid):
    """Read a CSV written by :func:`export_field` back onto ``grid``.

    Returns a :class:`Field` for single-value files and a
    :class:`SystemField` otherwise.  Rows may come in any order but must
    cover every interior node exactly once.
    """
    text = _read_text(path)
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    if not rows:
        raise OutputError(f"{path}: empty field file", path)
    header, body = rows[0], rows[1:]
    n_idx = grid.dimension
    n_coord = grid.dimension
    value_cols = header[n_idx + n_coord:]
    if header[: n_idx + n_coord] != _field_columns(grid, None)[: n_idx + n_coord] or not value_cols:
        raise OutputError(f"{path}: header {header} does not match a {grid.dimension}-D field", path)
    system = value_cols != ["value"]
    d = len(value_cols)
    lookup = grid.lattice_to_interior
    values = np.full((d, grid.n_interior), np.nan)
    seen = np.zeros(grid.n_interior, dtype=bool)
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise OutputError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}", path)
        try:
            lat = [int(v) for v in row[:n_idx]]
            vals = [float(v) for v in row[n_idx + n_coord:]]
        except ValueError as exc:
            raise OutputError(f"{path}:{lineno}: {exc}", path) from exc
        flat = lat[0] if grid.dimension == 1 else lat[1] * grid.shape[1] + lat[0]
        if not 0 <= flat < grid.n_nodes or lookup[flat] < 0:
            raise OutputError(f"{path}:{lineno}: node {lat} is not interior", path)
        k = lookup[flat]
        if seen[k]:
            raise OutputError(f"{path}:{lineno}: node {lat} listed twice", path)
        seen[k] = True
        values[:, k] = vals
    if not seen.all():
        raise OutputError(f"{path}: {int((~seen).sum())} interior nodes missing", path)
    if system:
        return SystemField(grid, values)
    return Field(grid, values[0])


# ---------------------------------------------------------------------------
# branches


def export_branch(branch: Branch, path, dump_fields: bool = False) -> list:
    """Write the branch summary CSV and, optionally, one field CSV per point.

    The summary has one row per accepted point in increasing ``lambda`` and
    ends with a comment line ``# termination: <reason>``.  An empty branch
    gives a header-only file.  Field dumps go next to the summary as
    ``<stem>_point_<k>.csv`` (a single ``value`` column for scalar
    problems).  Returns the list of written paths.
    """
    path = Path(path)
    buf = io.StringIO()
    buf.write(",".join(BRANCH_COLUMNS) + "\n")
    for pt in branch.points:
        row = [
            format_float(pt.lam),
            format_float(pt.sup_norm),
            format_float(energy_seminorm(pt.u, branch.p)),
            str(int(pt.picard_iters)),
            format_float(pt.contraction_estimate),
        ]
        buf.write(",".join(row) + "\n")
    if branch.points:
        buf.write(TRAILER_PREFIX + branch.termination + "\n")
    written = [_write_text(path, buf.getvalue())]
    if dump_fields:
        width = max(3, len(str(len(branch.points))))
        for k, pt in enumerate(branch.points):
            target = path.with_name(f"{path.stem}_point_{k:0{width}d}.csv")
            written.append(export_field(pt.u if pt.u.d > 1 else pt.u.component(0), target))
    return written


def read_branch_summary(path):
    """Parse a branch summary: returns ``(rows, termination)``; ``termination`` is None if absent."""
    text = _read_text(path)
    lines = text.splitlines()
    if not lines or lines[0] != ",".join(BRANCH_COLUMNS):
        raise OutputError(f"{path}: not a branch summary", path)
    rows, termination = [], None
    for line in lines[1:]:
        if line.startswith(TRAILER_PREFIX):
            termination = line[len(TRAILER_PREFIX):]
            continue
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        rows.append(
            {
                "lambda": float(parts[0]),
                "sup_norm": float(parts[1]),
                "energy_seminorm": float(parts[2]),
                "picard_iters": int(parts[3]),
                "contraction_estimate": float(parts[4]),
            }
        )
    return rows, termination


# ---------------------------------------------------------------------------
# JSON


def to_jsonable(obj):
    """Convert reports, numpy scalars and arrays into plain JSON values.

    Non-finite floats become the strings ``"nan"``, ``"inf"``, ``"-inf"`` so
    the output stays strict JSON.
    """
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else format_float(x)
    if obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, Path):
        return obj.as_posix()
    return str(obj)


def write_json(obj, path) -> Path:
    """Write ``obj`` as sorted, indented JSON with a trailing newline."""
    text = json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)
    return _write_text(path, text + "\n")


# ---------------------------------------------------------------------------
# manifest


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the stamp for reproducible manifests
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        try:
            moment = _dt.datetime.fromtimestamp(int(epoch), tz=_dt.timezone.utc)
        except ValueError:
            moment = _dt.datetime.now(_dt.timezone.utc)
    else:
        moment = _dt.datetime.now(_dt.timezone.utc)
    return moment.replace(microsecond=0).isoformat()


@dataclass
class RunManifest:
    """What a run was asked to do and which files it produced.

    Output paths are stored relative to ``root`` so manifests from reruns
    in different directories compare equal.
    """

    command: str
    config: dict
    seed: int | None = None
    root: Path = field(default_factory=Path.cwd)
    outputs: list = field(default_factory=list)
    status: str = "started"
    exit_code: int | None = None
    message: str = ""
    timestamp: str = field(default_factory=_timestamp)
    version: str = __version__

    def add(self, paths: Path | Iterable[Path]):
        if isinstance(paths, (str, Path)):
            paths = [paths]
        for p in paths:
            p = Path(p)
            try:
                rel = p.resolve().relative_to(Path(self.root).resolve())
            except ValueError:
                rel = p
            name = rel.as_posix()
            if name not in self.outputs:
                self.outputs.append(name)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "timestamp": self.timestamp,
            "version": self.version,
            "outputs": sorted(self.outputs),
            "status": self.status,
            "exit_code": self.exit_code,
            "message": self.message,
        }

    def write(self, path) -> Path:
        return write_json(self, path)
