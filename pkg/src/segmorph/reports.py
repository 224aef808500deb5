"""CSV and JSON serialization of study reports; byte-stable for identical inputs."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .analysis import Table
from .errors import IoFailure
from .manifest import load_schema

REPORT_SCHEMA_VERSION = "1.0"
SIG_DIGITS = 6


def _plain(x):
    if isinstance(x, np.generic):
        return x.item()
    return x


def format_cell(x) -> str:
    """CSV text for one cell: 6 significant digits, empty for missing, true/false for booleans."""
    x = _plain(x)
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.{SIG_DIGITS}g}"
    return str(x)


def json_cell(x):
    x = _plain(x)
    if isinstance(x, float):
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.{SIG_DIGITS}g}")
    return x


def table_csv(table: Table) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([format_cell(v) for v in row])
    return buf.getvalue()


def report_bundle(report) -> dict:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "reference_name": report.reference_name,
        "methods": list(report.methods),
        "primary_method": report.primary_method,
        "n_subjects": report.n_subjects,
        "tables": {
            name: {"columns": list(t.columns), "rows": [[json_cell(v) for v in r] for r in t.rows]}
            for name, t in report.tables.items()
        },
        "failures": [
            {"subject_id": f.subject_id, "session_id": f.session_id, "error": f.error}
            for f in report.failures
        ],
        "notes": list(report.notes),
    }


def validate_bundle(bundle: dict) -> None:
    jsonschema.validate(bundle, load_schema("report.schema.json"))


def emit_reports(report, out_dir) -> list[Path]:
    """Write one CSV per table and ``report.json``; returns the written paths."""
    out = Path(out_dir)
    bundle = report_bundle(report)
    validate_bundle(bundle)
    files = {f"{name}.csv": table_csv(t) for name, t in report.tables.items()}
    files["report.json"] = json.dumps(bundle, indent=2, ensure_ascii=False) + "\n"
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            path = out / name
            path.write_bytes(text.encode("utf-8"))
            written.append(path)
    except OSError as exc:
        raise IoFailure(f"cannot write reports to {out}: {exc}") from exc
    return written
