"""Small output helpers: CSV text with full-precision floats and atomic writes."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path


def _cell(v) -> str:
    if isinstance(v, (bool, str)) or v is None:
        return "" if v is None else str(v)
    if isinstance(v, int):
        return str(v)
    return repr(float(v))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def atomic_write(path, text: str) -> Path:
    """Write ``text`` next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_csv(path, header, rows) -> Path:
    return atomic_write(path, csv_text(header, rows))


def write_json(path, obj) -> Path:
    # json emits repr() of floats, i.e. full double precision
    return atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")
