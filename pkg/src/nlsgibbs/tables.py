"""Small CSV helpers shared by the experiment modules."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(target, rows, columns=None):
    """Write dict rows as UTF-8 CSV with a header row.

    ``target`` is a path or an open text handle.  Columns default to the keys
    of the first row, in order.
    """
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    own = isinstance(target, (str, Path))
    fh = open(target, "w", encoding="utf-8", newline="") if own else target
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])
    finally:
        if own:
            fh.close()


def read_table(source):
    with open(source, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
