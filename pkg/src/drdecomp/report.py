"""Deterministic JSON and CSV emitters.

JSON floats are written with 17 significant digits (``%.17g``); NaN and
infinities become ``null``. CSV tables use 6 decimals, with empty cells for
missing values.
"""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Iterable, Sequence

import numpy as np

from .estimators import DecompResult, Reference, Strategy


def _scalar(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _dump(v, indent: int, level: int) -> str:
    v = _scalar(v)
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "%.17g" % v if math.isfinite(v) else "null"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, np.ndarray):
        v = v.tolist()
    if isinstance(v, dict):
        if not v:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_dump(val, indent, level + 1)}" for k, val in v.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(v, (list, tuple)):
        if not v:
            return "[]"
        if all(not isinstance(_scalar(x), (dict, list, tuple, np.ndarray)) for x in v):
            return "[" + ", ".join(_dump(x, indent, level + 1) for x in v) + "]"
        items = [pad + _dump(x, indent, level + 1) for x in v]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(v).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    return _dump(obj, indent, 0) + "\n"


def _cell(v) -> str:
    v = _scalar(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6f}" if math.isfinite(v) else ""
    return str(v)


def dumps_csv(rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow([_cell(c) for c in row])
    return buf.getvalue()


def grid_rows(results: Sequence[DecompResult]):
    """Strategy rows by reference-block columns (estimate, se)."""
    refs = sorted({int(r.reference) for r in results})
    strategies = [s for s in Strategy if any(r.strategy is s for r in results)]
    cell = {(int(r.reference), r.strategy): r for r in results}
    header = ["strategy"]
    for ref in refs:
        header += [f"r{ref}", f"r{ref}_se"]
    yield header
    for st in strategies:
        row = [st.value]
        for ref in refs:
            res = cell.get((ref, st))
            row += [None, None] if res is None else [res.delta_hat, res.se]
        yield row


def results_rows(results: Sequence[DecompResult]):
    """Long format: one row per estimate."""
    cols = ["reference", "strategy", "engine", "delta_hat", "se", "explained_hat", "delta_obs",
            "n", "n0", "n1", "trimmed_count"]
    yield cols
    for r in results:
        d = r.to_dict()
        yield [d[c] for c in cols]


def reference_name(r) -> str:
    return Reference.parse(r).name.lower()
