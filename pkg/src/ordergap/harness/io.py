"""Trace and report files.

Traces are CSV with `#` header lines carrying the schema version, the
experiment id, the config digest, and the seed identity; floats are written
with 17 significant digits so parsed values round-trip bit-exactly, and NaN
cells are left empty.  Reports are flat key=value records under the same
header.  Nothing time- or path-dependent is ever written, so rerunning a
config reproduces every artifact byte for byte.
"""

from pathlib import Path

import numpy as np

from ..core import OrderGapTrace

__all__ = [
    "SCHEMA_VERSION",
    "fmt_value",
    "write_trace",
    "read_trace",
    "write_report",
    "read_report",
]

SCHEMA_VERSION = 1


def _fmt_float(x: float) -> str:
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return "%.17g" % x


def fmt_value(value) -> str:
    """Canonical text form: 17-significant-digit floats, true/false booleans,
    none for missing values, space-joined [..] vectors."""
    if value is None:
        return "none"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _fmt_float(float(value))
    if isinstance(value, np.ndarray):
        return "[" + " ".join(fmt_value(v) for v in value.tolist()) + "]"
    if isinstance(value, (list, tuple)):
        return "[" + " ".join(fmt_value(v) for v in value) + "]"
    return str(value)


def _header_lines(kind: str, experiment: str, digest: str, extra: dict | None = None) -> list[str]:
    lines = [
        f"# ordergap-{kind} schema={SCHEMA_VERSION}",
        f"# experiment={experiment}",
        f"# config_digest={digest}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}={fmt_value(value)}")
    return lines


def _csv_cell(x: float) -> str:
    return "" if np.isnan(x) else _fmt_float(x)


def write_trace(
    path,
    trace: OrderGapTrace,
    experiment: str,
    digest: str,
    seed: int,
    trajectory: int,
    bound_curve: np.ndarray | None = None,
) -> None:
    """Write one trajectory as CSV, with plot-ready derived columns.

    Always emits t, event_id, omega, and log10_omega (empty where omega
    underflows to zero); window_mean / dist_to_ref when the trace carries
    them; the supplied per-step bound curve; and any domain-specific columns
    attached to the trace, in sorted name order.
    """
    n = len(trace)
    names = ["t", "event_id", "omega", "log10_omega"]
    log_omega = np.where(trace.omega > 0, np.log10(np.maximum(trace.omega, 1e-300)), np.nan)
    cols: list[np.ndarray] = [trace.t, trace.event_id, trace.omega, log_omega]
    if trace.window_mean is not None:
        names.append("window_mean")
        cols.append(trace.window_mean)
    if trace.dist_to_ref is not None:
        names.append("dist_to_ref")
        cols.append(trace.dist_to_ref)
    if bound_curve is not None:
        if len(bound_curve) != n:
            raise ValueError("bound curve length must match the trace")
        names.append("gap_bound")
        cols.append(np.asarray(bound_curve, dtype=np.float64))
    for name in sorted(trace.columns):
        names.append(name)
        cols.append(np.asarray(trace.columns[name], dtype=np.float64))

    lines = _header_lines("trace", experiment, digest, {"seed": seed, "trajectory": trajectory})
    lines.append(",".join(names))
    for i in range(n):
        row = [str(int(trace.t[i])), str(int(trace.event_id[i]))]
        row += [_csv_cell(float(col[i])) for col in cols[2:]]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a trace file back: (header dict, column name -> float array)."""
    header: dict[str, str] = {}
    rows: list[list[str]] = []
    names: list[str] | None = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                header[key.strip().split()[-1] if " " in key else key.strip()] = value.strip()
            continue
        if names is None:
            names = line.split(",")
            continue
        rows.append(line.split(","))
    if names is None:
        raise ValueError(f"{path}: no column header found")
    data = {
        name: np.array(
            [float(row[j]) if row[j] != "" else np.nan for row in rows], dtype=np.float64
        )
        for j, name in enumerate(names)
    }
    return header, data


def write_report(path, records: dict, kind: str, experiment: str, digest: str) -> None:
    """Write a flat key=value report in the records' insertion order."""
    lines = _header_lines("report", experiment, digest)
    lines.append(f"kind={kind}")
    for key, value in records.items():
        lines.append(f"{key}={fmt_value(value)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path) -> dict[str, str]:
    """Read a report back as raw strings (header keys included)."""
    out: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        body = line[1:].strip() if line.startswith("#") else line.strip()
        if not body or "=" not in body:
            continue
        key, _, value = body.partition("=")
        out[key.strip()] = value.strip()
    return out
