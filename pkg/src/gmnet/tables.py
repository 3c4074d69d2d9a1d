"""Delimited-text and JSON formatting shared by the library writers and the CLI."""

from __future__ import annotations

import csv
import io
import json

import numpy as np

MISSING = "NA"


def fmt(x) -> str:
    """Round-trip float text; masked or None values become ``NA``."""
    if x is None or x is np.ma.masked:
        return MISSING
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def format_rows(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) if isinstance(x, (float, np.floating)) or x is np.ma.masked else x for x in row])
    return buf.getvalue()


def format_grid(matrix, row_labels, col_labels, corner: str = "") -> str:
    """Dense delimited grid with headers; masked entries written as ``NA``."""
    m = np.ma.asarray(matrix)
    mask = np.ma.getmaskarray(m)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([corner, *col_labels])
    for r, label in enumerate(row_labels):
        w.writerow([label, *(MISSING if mask[r, c] else repr(float(m.data[r, c]))
                             for c in range(m.shape[1]))])
    return buf.getvalue()


def masked_list(a) -> list:
    a = np.ma.asarray(a)
    mask = np.ma.getmaskarray(a)
    return [None if mk else float(x) for x, mk in zip(a.data.ravel(), mask.ravel())]


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
