"""Result files: versioned JSON and commented CSV, plus count-table loading for re-analysis.

Every file carries the resolved experiment spec and the code version.  The
creation time is the only non-deterministic field and lives in one header
entry (``created_utc``).
"""
from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .engine import CountsTable

SCHEMA = "pdcdecoy/result"
SCHEMA_VERSION = 1
COUNTS_COLUMNS = ("point", "mean_photons", "eta_C", "n", "n_click", "n_noclick", "n_T", "n_trig")


class OutputError(OSError):
    pass


@dataclass
class Result:
    kind: str
    columns: Sequence[str]
    rows: list = field(default_factory=list)
    counts: list = field(default_factory=list)  # [(config dict, CountsTable)]
    summary: dict = field(default_factory=dict)


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def _json_default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def counts_rows(counts: Sequence) -> list[dict]:
    rows = []
    for i, (cfg, table) in enumerate(counts):
        for n in range(table.bins + 1):
            rows.append(
                {
                    "point": i,
                    "mean_photons": cfg.get("mean_photons"),
                    "eta_C": cfg.get("eta_C"),
                    "n": n,
                    "n_click": table.joint_click[n],
                    "n_noclick": table.joint_noclick[n],
                    "n_T": table.n_T[n],
                    "n_trig": table.n_trig,
                }
            )
    return rows


def render(result: Result, spec: dict, fmt: str, created: Optional[str] = None) -> str:
    created = created or datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    if fmt == "json":
        doc = {
            "created_utc": created,
            "schema": SCHEMA,
            "schema_version": SCHEMA_VERSION,
            "code_version": __version__,
            "kind": result.kind,
            "spec": spec,
            "summary": result.summary,
            "columns": list(result.columns),
            "rows": [[r.get(c) for c in result.columns] for r in result.rows],
            "counts": [{"config": c, "table": t.to_dict()} for c, t in result.counts],
        }
        return json.dumps(doc, indent=1, default=_json_default, allow_nan=True) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    buf = _io.StringIO()
    buf.write(f"# created_utc: {created}\n")
    buf.write(f"# schema: {SCHEMA} v{SCHEMA_VERSION}; code_version: {__version__}; kind: {result.kind}\n")
    buf.write("# spec: " + json.dumps(spec, sort_keys=True, default=_json_default) + "\n")
    if result.summary:
        buf.write("# summary: " + json.dumps(result.summary, sort_keys=True, default=_json_default) + "\n")
    columns, rows = result.columns, result.rows
    if result.kind == "counts":
        columns, rows = COUNTS_COLUMNS, counts_rows(result.counts)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def emit(result: Result, spec: dict, path: Path, fmt: str = "csv") -> Path:
    path = Path(path)
    text = render(result, spec, fmt)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def _num(s: str):
    if s == "":
        return None
    try:
        return int(s)
    except ValueError:
        return float(s)


def load_counts(path: Path) -> list[tuple[dict, CountsTable]]:
    """Count tables from a JSON or CSV result file, in file order."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc}") from exc
    if text.lstrip().startswith("{"):
        doc = json.loads(text)
        if doc.get("schema") != SCHEMA:
            raise ValueError(f"{path}: not a {SCHEMA} document")
        if not doc.get("counts"):
            raise ValueError(f"{path}: no count tables in file")
        return [(c["config"], CountsTable.from_dict(c["table"])) for c in doc["counts"]]
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or not set(COUNTS_COLUMNS) <= set(reader.fieldnames):
        raise ValueError(f"{path}: CSV lacks count columns {COUNTS_COLUMNS}")
    points: dict[int, dict] = {}
    for row in reader:
        p = points.setdefault(int(row["point"]), {"cfg": {}, "click": [], "noclick": [], "n_trig": None})
        p["cfg"] = {"mean_photons": _num(row["mean_photons"]), "eta_C": _num(row["eta_C"])}
        if int(row["n"]) != len(p["click"]):
            raise ValueError(f"{path}: click numbers out of order at point {row['point']}")
        p["click"].append(_num(row["n_click"]))
        p["noclick"].append(_num(row["n_noclick"]))
        p["n_trig"] = _num(row["n_trig"])
    return [
        (p["cfg"], CountsTable(p["n_trig"], _array(p["click"]), _array(p["noclick"])))
        for _, p in sorted(points.items())
    ]


def _array(values):
    import numpy as np

    if all(isinstance(v, int) for v in values):
        return np.asarray(values, dtype=np.int64)
    return np.asarray(values, dtype=float)
