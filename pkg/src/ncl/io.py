"""Deterministic serialisation: JSON and CSV with 17 significant digits."""
from __future__ import annotations

import hashlib
import json
import math
import os
from datetime import datetime, timezone

import numpy as np

from . import __version__


def fmt(x) -> str:
    """Format a number with 17 significant digits; infinities as 'inf'."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        s = fmt(obj)
        # JSON has no infinity or NaN literal; store them as strings
        return json.dumps(s) if s in ("inf", "-inf", "nan") else s
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_json(v, indent, level + 1) for v in obj) + "]"
        items = [pad + _json(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    return _json(obj, indent, 0) + "\n"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def timestamp() -> str:
    """UTC time of the run; SOURCE_DATE_EPOCH pins it for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return t.strftime("%Y-%m-%dT%H:%M:%SZ")


def manifest(command: str, config: dict, inputs=()) -> dict:
    return {
        "command": command,
        "config": config,
        "version": __version__,
        "timestamp": timestamp(),
        "inputs": {str(p): file_sha256(p) for p in inputs},
    }


def write_text(path, text: str):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def csv_text(header, rows, man: dict | None = None) -> str:
    """CSV body; the manifest goes first as a single '#' comment line."""
    lines = []
    if man is not None:
        lines.append("# manifest: " + json.dumps(man, sort_keys=True, separators=(",", ":")))
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join("" if v is None else (v if isinstance(v, str) else fmt(v))
                              for v in row))
    return "\n".join(lines) + "\n"


def kernel_csv(kernel, man: dict | None = None) -> str:
    """One row per i: i, then P(L_i(Y) = k) for k = 1..N, then the row for infinity."""
    head = [f"# c: {fmt(kernel.c)}", f"# measure: {kernel.measure}"]
    body = csv_text(["i"] + [f"k{k}" for k in range(1, kernel.N + 1)],
                    ([i] + [kernel.K[i, k] for k in range(1, kernel.N + 1)]
                     for i in range(1, kernel.N + 1)), man)
    extra = ""
    if kernel.inf_row is not None:
        extra = f"# inf_row: p_one={fmt(kernel.inf_row[0])}, p_inf={fmt(kernel.inf_row[1])}\n"
    return "\n".join(head) + "\n" + body + extra
