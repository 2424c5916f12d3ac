"""File formats: dataset CSV, truth/fit JSON, curve CSVs and run manifests.

Floats are written with ``repr`` so every number round-trips exactly, and
JSON uses sorted keys, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import io
import json
import platform
from pathlib import Path

import numpy as np

from .likelihood import DailySeries

RESERVED = ("day", "date", "weekday", "Y")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "NA" if np.isnan(v) else repr(v)


def write_series_csv(series: DailySeries, path=None) -> str:
    names = sorted(series.covariates)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["day", "date", "weekday", "Y"] + names)
    for t in range(series.T):
        date = (series.start_date + dt.timedelta(days=t)).isoformat() if series.start_date else ""
        w.writerow([t + 1, date, int(series.weekday[t]), int(series.Y[t])]
                   + [_fmt(series.covariates[n][t]) for n in names])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_series_csv(path) -> DailySeries:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if "Y" not in rows[0]:
        raise ValueError(f"{path}: missing column 'Y'")
    days = [int(r.get("day") or i + 1) for i, r in enumerate(rows)]
    if days != list(range(1, len(rows) + 1)):
        raise ValueError(f"{path}: day column must run 1..T without gaps")
    Y = np.array([int(r["Y"]) for r in rows])
    covs = {}
    for name in rows[0]:
        if name in RESERVED:
            continue
        covs[name] = np.array([float("nan") if r[name] in ("", "NA") else float(r[name]) for r in rows])
    start = rows[0].get("date") or None
    start = dt.date.fromisoformat(start) if start else None
    weekday = np.array([int(r["weekday"]) for r in rows]) if rows[0].get("weekday") not in (None, "") else None
    return DailySeries(Y, covs, weekday, start)


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def write_text(path, text: str):
    Path(path).write_text(text)


def curve_table_csv(rows: list, header: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) if not isinstance(v, str) else v for v in r])
    return buf.getvalue()


def read_csv_columns(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return {}
    out = {}
    for k in rows[0]:
        try:
            out[k] = np.array([float("nan") if r[k] in ("", "NA") else float(r[k]) for r in rows])
        except ValueError:
            out[k] = np.array([r[k] for r in rows])
    return out


def config_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def versions() -> dict:
    import scipy

    from . import __version__

    return {"casecross": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def manifest(command: str, cfg_hash: str, seed, outputs: list, started: str, inputs: list | None = None,
             extra: dict | None = None) -> dict:
    """RunManifest; wall-clock timestamps live only here."""
    return {
        "command": command,
        "config_hash": cfg_hash,
        "seed": seed,
        "versions": versions(),
        "timestamps": {"started": started, "finished": now()},
        "outputs": sorted(outputs),
        "inputs": inputs or [],
        **(extra or {}),
    }


def now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
