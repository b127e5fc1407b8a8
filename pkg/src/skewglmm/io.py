"""Long-format CSV and JSON serialization.

Dataset files have the header ``unit_id,time,y,<covariates...>`` with one row
per observation. Rows of a unit need not be contiguous; within a unit they are
ordered by time on reading.
"""

from __future__ import annotations

import ast
import csv
import json
import math
import operator
from dataclasses import dataclass

import numpy as np

from .data import LongitudinalDataset, Unit
from .skewnormal import DomainError

REQUIRED = ("unit_id", "time", "y")


class DataFileError(DomainError):
    """Malformed dataset file; ``row`` is the 1-based line number when known."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


@dataclass
class RawTable:
    unit_ids: list[str]
    time: np.ndarray
    y: np.ndarray
    columns: dict[str, np.ndarray]


def read_table(path) -> RawTable:
    """Parse a long-format CSV; raises :class:`DataFileError` naming the offending row."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFileError("empty file", 1) from None
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise DataFileError(f"header lacks column(s) {', '.join(missing)}", 1)
        if len(set(header)) != len(header):
            raise DataFileError("duplicate column names in header", 1)
        pos = {h: i for i, h in enumerate(header)}
        extra = [h for h in header if h not in REQUIRED]
        ids, t, y = [], [], []
        cols = {h: [] for h in extra}
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFileError(f"expected {len(header)} fields, found {len(row)}", line)
            try:
                vals = {h: float(row[pos[h]]) for h in ("time", "y", *extra)}
            except ValueError as exc:
                raise DataFileError(f"non-numeric field ({exc})", line) from None
            if not all(math.isfinite(v) for v in vals.values()):
                raise DataFileError("non-finite value", line)
            if not vals["y"] > 0:
                raise DataFileError(f"response y = {vals['y']} must be positive", line)
            ids.append(row[pos["unit_id"]].strip())
            t.append(vals["time"])
            y.append(vals["y"])
            for h in extra:
                cols[h].append(vals[h])
    if not ids:
        raise DataFileError("no data rows")
    return RawTable(ids, np.array(t), np.array(y), {h: np.array(v) for h, v in cols.items()})


# ---------------------------------------------------------------------------
# formulas and time transforms
# ---------------------------------------------------------------------------

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}


def parse_time_transform(spec: str):
    """Compile an affine expression in ``t`` such as ``"(t-5)/10"``."""
    try:
        tree = ast.parse(spec, mode="eval")
    except SyntaxError:
        raise DomainError(f"cannot parse time transform {spec!r}") from None

    def ev(node, t):
        if isinstance(node, ast.Expression):
            return ev(node.body, t)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "t":
            return t
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left, t), ev(node.right, t))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand, t)
            return -v if isinstance(node.op, ast.USub) else v
        raise DomainError(f"unsupported element in time transform {spec!r}")

    f = lambda t: ev(tree, t)  # noqa: E731
    a, b, c = f(0.0), f(1.0), f(2.0)
    if not all(math.isfinite(v) for v in (a, b, c)) or abs((c - b) - (b - a)) > 1e-9 * (1 + abs(b - a)):
        raise DomainError(f"time transform {spec!r} is not affine")
    if b == a:
        raise DomainError(f"time transform {spec!r} is constant")
    return lambda t: a + (b - a) * np.asarray(t, dtype=float)


def parse_formula(formula: str | None, available: list[str]) -> list[str]:
    """Covariate names on the right of ``y ~ a + b``; the intercept is implicit.

    ``time`` refers to the (possibly transformed) time column. Without a
    formula every non-required column is used.
    """
    if formula is None:
        return list(available)
    if "~" not in formula:
        raise DomainError(f"formula {formula!r} lacks '~'")
    lhs, rhs = (s.strip() for s in formula.split("~", 1))
    if lhs != "y":
        raise DomainError("the response of the formula must be y")
    terms = [t.strip() for t in rhs.split("+") if t.strip()]
    terms = [t for t in terms if t != "1"]
    for t in terms:
        if t != "time" and t not in available:
            raise DomainError(f"formula term {t!r} is not a column")
    if len(set(terms)) != len(terms):
        raise DomainError("formula repeats a term")
    return terms


def build_dataset(table: RawTable, covariates: list[str], time_transform=None) -> LongitudinalDataset:
    """Group rows into units; design rows are ``[1, covariates...]``."""
    order = {}
    for i, uid in enumerate(table.unit_ids):
        order.setdefault(uid, []).append(i)
    tt = table.time if time_transform is None else time_transform(table.time)
    units = []
    for uid, rows in order.items():
        rows = np.array(rows)
        rows = rows[np.argsort(table.time[rows], kind="stable")]
        times = table.time[rows]
        if np.any(np.diff(times) == 0):
            raise DataFileError(f"unit {uid!r} has repeated observation times")
        cols = [np.ones(rows.size)]
        for c in covariates:
            cols.append(tt[rows] if c == "time" else table.columns[c][rows])
        units.append(Unit(uid, times, table.y[rows], np.column_stack(cols)))
    return LongitudinalDataset(units, ["intercept", *covariates])


def read_dataset(path, formula: str | None = None, time_transform: str | None = None) -> LongitudinalDataset:
    table = read_table(path)
    covs = parse_formula(formula, list(table.columns))
    tf = None if time_transform is None else parse_time_transform(time_transform)
    return build_dataset(table, covs, tf)


def write_dataset(dataset: LongitudinalDataset, path) -> None:
    """Write the long-format CSV; the intercept column is implied and omitted."""
    names = list(dataset.covariate_names)
    drop = names[:1] == ["intercept"]
    cov_names = names[1:] if drop else names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "time", "y", *cov_names])
        for u in dataset.units:
            X = u.X[:, 1:] if drop else u.X
            for j in range(u.n):
                w.writerow([u.unit_id, _fmt(u.times[j]), _fmt(u.y[j]), *(_fmt(v) for v in X[j])])


def _fmt(v: float) -> str:
    return repr(float(v))


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def sidecar_path(path) -> str:
    """``data.csv -> data.truth.json``."""
    p = str(path)
    stem = p[:-4] if p.lower().endswith(".csv") else p
    return stem + ".truth.json"
