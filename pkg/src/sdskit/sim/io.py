"""CSV and JSON outputs of ensemble runs (schema ``sdskit.sim/1``)."""
from __future__ import annotations

import csv
import io
import json
from typing import Iterable, Mapping

import numpy as np

SCHEMA = "sdskit.sim/1"


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def to_json(block: Mapping, schema: str = SCHEMA) -> str:
    """Deterministic JSON: sorted keys, non-finite floats as strings."""
    return json.dumps(_plain({"schema": schema, **block}), sort_keys=True, indent=2)


def to_csv(rows: Iterable[Mapping]) -> str:
    rows = [_plain(r) for r in rows]
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def time_rows(times: np.ndarray, columns: Mapping[str, np.ndarray]) -> list[dict]:
    """One row per time sample: time plus one column per named series."""
    return [{"t": float(t), **{k: float(v[i]) for k, v in columns.items()}} for i, t in enumerate(times)]
