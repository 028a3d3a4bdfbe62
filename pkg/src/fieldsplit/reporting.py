"""Plain-text and CSV artifacts: iteration tables, residual histories, field grids.

CSV numbers are written with 17 significant digits so that files
round-trip exactly and diffs between runs are meaningful.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .geometry import DAY, Grid
from .nonlinear import SolverReport
from .timeloop import RunSummary

DNC = "d.n.c."
NOT_APPLICABLE = "-"
TABLE_ROWS = (
    "Nonlinear iterations",
    "Iterations per time step",
    "Pressure iterations",
    "Transport iterations",
)


def fmt(x: float) -> str:
    return f"{x:.16e}"


def column_label(summary: RunSummary) -> str:
    if summary.solver == "newton":
        return "newton"
    return f"{summary.solver} ({summary.strategy})"


def _table_cells(summary: RunSummary) -> list:
    if not summary.converged:
        return [DNC] * len(TABLE_ROWS)
    split = summary.solver != "newton"
    return [
        summary.outer_iterations,
        summary.iterations_per_step,
        summary.pressure_iterations if split else NOT_APPLICABLE,
        summary.transport_iterations if split else NOT_APPLICABLE,
    ]


def emit_iteration_table(summaries: list[RunSummary], path_stem: str | Path | None = None):
    """Solver-by-row iteration table as ``(text, csv_text)``.

    With ``path_stem`` the two renderings are also written to
    ``<stem>.txt`` and ``<stem>.csv``.
    """
    if not summaries:
        raise ValueError("at least one run summary is required")
    labels = [column_label(s) for s in summaries]
    columns = [_table_cells(s) for s in summaries]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["quantity"] + labels)
    for i, row in enumerate(TABLE_ROWS):
        writer.writerow([row] + [fmt(c) if isinstance(c, float) else c for c in (col[i] for col in columns)])
    csv_text = buf.getvalue()

    def show(c):
        return f"{c:.2f}" if isinstance(c, float) else str(c)

    width0 = max(len(r) for r in TABLE_ROWS)
    widths = [max(len(lab), *(len(show(c)) for c in col)) for lab, col in zip(labels, columns)]
    lines = ["  ".join([" " * width0] + [lab.rjust(w) for lab, w in zip(labels, widths)])]
    for i, row in enumerate(TABLE_ROWS):
        cells = [show(col[i]).rjust(w) for col, w in zip(columns, widths)]
        lines.append("  ".join([row.ljust(width0)] + cells))
    text = "\n".join(lines) + "\n"

    if path_stem is not None:
        stem = Path(path_stem)
        _write(stem.with_suffix(".txt"), text)
        _write(stem.with_suffix(".csv"), csv_text)
    return text, csv_text


def emit_step_table(summary: RunSummary, path: str | Path | None = None) -> str:
    """Per-step CSV: time, step size, iteration counts, max CFL, failed attempts."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "time_days", "dt_days", "outer", "pressure", "transport",
                     "max_cfl", "failed_attempts"])
    for rec in summary.steps:
        r = rec.report
        writer.writerow([rec.index, fmt(rec.time / DAY), fmt(rec.dt / DAY), r.outer_iterations,
                         r.pressure_iterations, r.transport_iterations, fmt(rec.max_cfl),
                         len(rec.failed_attempts)])
    text = buf.getvalue()
    if path is not None:
        _write(path, text)
    return text


def emit_convergence_history(report: SolverReport, step_index: int, path: str | Path | None = None) -> str:
    """CSV of (outer iteration, normalized residual norm), starting from iteration 0."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "outer_iteration", "normalized_norm"])
    for k, nrm in enumerate(report.residual_history):
        writer.writerow([step_index, k, fmt(nrm)])
    text = buf.getvalue()
    if path is not None:
        _write(path, text)
    return text


def time_tag(time: float) -> str:
    """File-name tag such as ``t75d`` or ``t12.5d`` for a time in seconds."""
    return f"t{time / DAY:g}d"


def emit_fields(state, grid: Grid, time: float, directory: str | Path) -> list[Path]:
    """Write saturation and pressure grids; returns the two paths.

    Each file starts with the line ``time_days,nx,nz`` (values), followed by
    ``nz`` rows of ``nx`` comma-separated values in row-major order.
    """
    directory = Path(directory)
    paths = []
    for name, values in (("saturation", state.s), ("pressure", state.p)):
        values = np.asarray(values, dtype=float).reshape(grid.nz, grid.nx)
        lines = [f"{fmt(time / DAY)},{grid.nx},{grid.nz}"]
        lines += [",".join(fmt(v) for v in row) for row in values]
        path = directory / f"{name}_{time_tag(time)}.csv"
        _write(path, "\n".join(lines) + "\n")
        paths.append(path)
    return paths


def read_field(path: str | Path):
    """Inverse of :func:`emit_fields` for one file: ``(time_days, array[nz, nx])``."""
    lines = Path(path).read_text().splitlines()
    head = lines[0].split(",")
    time_days, nx, nz = float(head[0]), int(head[1]), int(head[2])
    values = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    if values.shape != (nz, nx):
        raise ValueError(f"{path}: expected {nz}x{nx} values, found {values.shape}")
    return time_days, values


def _write(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
