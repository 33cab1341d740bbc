"""Deterministic file output: atomic writes, canonical CSV/JSON formatting.

Data files must be byte-identical across re-runs with the same config, so
floats go through repr-faithful formatting and timestamps live in a
separate metadata file that data comparisons can ignore.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
import tempfile
from datetime import datetime, timezone

import numpy as np
import scipy

from . import __version__


def fmt_float(x: float) -> str:
    """Shortest-faithful decimal for CSV cells."""
    return "%.17g" % float(x)


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return fmt_float(float(value))
    return str(value)


def write_csv(path: str, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def write_json(path: str, obj) -> None:
    """Canonical JSON: sorted keys, fixed separators, trailing newline."""
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2)
    atomic_write_text(path, text + "\n")


def write_metadata(path: str, command: str, config_path: str | None) -> None:
    """Timestamps and versions; the one file allowed to differ between runs."""
    meta = {
        "command": command,
        "config": config_path,
        "created": datetime.now(timezone.utc).isoformat(),
        "versions": {
            "package": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
    }
    write_json(path, meta)
