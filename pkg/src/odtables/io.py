"""File formats: header-less CSV matrices, constraint files and sample streams.

Indices are 0-based in memory and 1-based in every file.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
import yaml

from .core import ConstraintError, ConstraintSet

FORMATS = ("jsonl", "csv")


def read_matrix(path, dtype=np.float64) -> np.ndarray:
    """Header-less comma-separated matrix. A single line gives a 1×K matrix."""
    arr = np.loadtxt(path, delimiter=",", dtype=dtype, ndmin=2)
    if arr.size == 0:
        raise ValueError(f"{path} is empty")
    return arr


def read_vector(path, dtype=np.float64) -> np.ndarray:
    arr = read_matrix(path, dtype)
    if min(arr.shape) != 1:
        raise ValueError(f"{path} holds a {arr.shape} matrix, expected a vector")
    return arr.ravel()


def write_matrix(path, arr) -> None:
    arr = np.atleast_2d(np.asarray(arr))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in arr:
            w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return repr(float(v))


def _vector_field(value, base: Path) -> Optional[np.ndarray]:
    if value is None:
        return None
    if isinstance(value, str):
        p = Path(value)
        return read_vector(p if p.is_absolute() else base / p, dtype=np.int64)
    return np.asarray(value, dtype=np.int64)


def constraints_from_dict(spec: dict, base=".") -> ConstraintSet:
    """Build a constraint set from a parsed constraints document (1-based cells)."""
    spec = dict(spec or {})
    unknown = set(spec) - {"total", "row_sums", "col_sums", "fixed_cells", "symmetric"}
    if unknown:
        raise ConstraintError(f"unknown constraint keys: {sorted(unknown)}")
    base = Path(base)
    cells = []
    for item in spec.get("fixed_cells") or ():
        if len(item) != 3:
            raise ConstraintError(f"fixed cell {item!r} is not [i, j, value]")
        i, j, v = (int(x) for x in item)
        if i < 1 or j < 1:
            raise ConstraintError(f"fixed cell indices are 1-based, got ({i}, {j})")
        cells.append((i - 1, j - 1, v))
    return ConstraintSet(
        total=spec.get("total"),
        row_sums=_vector_field(spec.get("row_sums"), base),
        col_sums=_vector_field(spec.get("col_sums"), base),
        fixed_cells=tuple(cells),
        symmetric=bool(spec.get("symmetric", False)),
    )


def constraints_to_dict(c: ConstraintSet) -> dict:
    out: dict = {}
    if c.total is not None:
        out["total"] = int(c.total)
    if c.row_sums is not None:
        out["row_sums"] = [int(v) for v in c.row_sums]
    if c.col_sums is not None:
        out["col_sums"] = [int(v) for v in c.col_sums]
    if c.fixed_cells:
        out["fixed_cells"] = [[i + 1, j + 1, v] for i, j, v in c.fixed_cells]
    if c.symmetric:
        out["symmetric"] = True
    return out


def load_constraints(path) -> ConstraintSet:
    """Read a YAML (or JSON) constraints file; relative paths resolve against its folder."""
    path = Path(path)
    with open(path) as fh:
        spec = yaml.safe_load(fh)
    return constraints_from_dict(spec, base=path.parent)


class StreamWriter:
    """Append-only sample stream: one record per retained iteration.

    jsonl records are ``{"iteration", "ensemble", "values"}``; csv rows are
    ``iteration,ensemble,v1,...,vK`` under a header line. Values are flattened
    row-major. Floats are written with ``repr`` so they round-trip exactly.
    """

    def __init__(self, path, fmt: str = "jsonl"):
        if fmt not in FORMATS:
            raise ValueError(f"unknown stream format {fmt!r}")
        self.path = Path(path)
        self.fmt = fmt
        self._fh = open(self.path, "w", newline="")
        self._csv = csv.writer(self._fh) if fmt == "csv" else None
        self._header = False

    def write(self, iteration: int, ensemble: int, values) -> None:
        flat = np.asarray(values).ravel()
        items = [int(v) for v in flat] if flat.dtype.kind in "iu" else [float(v) for v in flat]
        if self.fmt == "jsonl":
            self._fh.write(json.dumps({"iteration": int(iteration), "ensemble": int(ensemble),
                                       "values": items}) + "\n")
            return
        if not self._header:
            self._csv.writerow(["iteration", "ensemble"] + [f"v{k + 1}" for k in range(len(items))])
            self._header = True
        self._csv.writerow([int(iteration), int(ensemble)] + [_fmt(v) for v in items])

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def stream_format(path) -> str:
    suffix = Path(path).suffix.lstrip(".")
    if suffix not in FORMATS:
        raise ValueError(f"cannot infer stream format from {path}")
    return suffix


def read_stream(path) -> Iterator[tuple[int, int, np.ndarray]]:
    """Yield ``(iteration, ensemble, flat values)`` records from a stream file."""
    fmt = stream_format(path)
    with open(path, newline="") as fh:
        if fmt == "jsonl":
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    yield rec["iteration"], rec["ensemble"], np.asarray(rec["values"])
        else:
            reader = csv.reader(fh)
            next(reader, None)
            for row in reader:
                vals = [float(v) if any(ch in v for ch in ".enai") else int(v) for v in row[2:]]
                yield int(row[0]), int(row[1]), np.asarray(vals)


def concat_files(parts, dest, skip_header: bool = False) -> None:
    """Concatenate per-member stream files; csv headers after the first are dropped."""
    with open(dest, "w", newline="") as out:
        first = True
        for p in parts:
            with open(p, newline="") as fh:
                for k, line in enumerate(fh):
                    if skip_header and k == 0 and not first:
                        continue
                    out.write(line)
            first = False
