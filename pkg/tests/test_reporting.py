import csv
import io

import numpy as np
import pytest

from fieldsplit.discretization import State
from fieldsplit.geometry import DAY, build_cartesian_grid
from fieldsplit.nonlinear import SolverReport
from fieldsplit.reporting import (
    DNC,
    NOT_APPLICABLE,
    emit_convergence_history,
    emit_fields,
    emit_iteration_table,
    emit_step_table,
    read_field,
    time_tag,
)
from fieldsplit.timeloop import RunSummary, StepRecord


def _summary(solver, counts, aborted=False, strategy="fixed 1e-06"):
    steps = [
        StepRecord(i, (i + 1) * 10 * DAY, 10 * DAY,
                   SolverReport(o, p, t, residual_history=[1.0] * (o + 1), converged=True), 0.5)
        for i, (o, p, t) in enumerate(counts)
    ]
    return RunSummary(solver, strategy, 10 * DAY, steps, aborted=aborted)


def _rows(csv_text):
    return list(csv.reader(io.StringIO(csv_text)))


def test_iteration_table_cells():
    newton = _summary("newton", [(5, 0, 0), (4, 0, 0)])
    fs = _summary("fsmsn_ut", [(3, 4, 6), (2, 3, 5)])
    text, table = emit_iteration_table([newton, fs])
    rows = _rows(table)
    assert rows[0] == ["quantity", "newton", "fsmsn_ut (fixed 1e-06)"]
    assert rows[1][1:] == ["9", "5"]
    assert float(rows[2][1]) == 4.5 and float(rows[2][2]) == 2.5
    assert rows[3][1] == NOT_APPLICABLE and rows[3][2] == "7"
    assert rows[4][1] == NOT_APPLICABLE and rows[4][2] == "11"
    assert "Nonlinear iterations" in text and "4.50" in text


def test_non_converged_run_is_marked_in_every_cell():
    bad = _summary("mspin_p", [(50, 60, 70)], aborted=True)
    _, table = emit_iteration_table([bad])
    assert all(r[1] == DNC for r in _rows(table)[1:])


def test_tables_are_deterministic_and_written(tmp_path):
    runs = [_summary("newton", [(5, 0, 0)]), _summary("sfi_ut", [(7, 8, 9)])]
    a = emit_iteration_table(runs, tmp_path / "iterations")
    b = emit_iteration_table(runs)
    assert a == b
    assert (tmp_path / "iterations.csv").read_text() == a[1]
    assert (tmp_path / "iterations.txt").read_text() == a[0]
    with pytest.raises(ValueError):
        emit_iteration_table([])


def test_full_precision_numbers():
    s = _summary("newton", [(1, 0, 0), (1, 0, 0), (2, 0, 0)])
    _, table = emit_iteration_table([s])
    assert float(_rows(table)[2][1]) == 4 / 3


def test_convergence_history_length():
    rep = SolverReport(outer_iterations=3, residual_history=[1.0, 1e-2, 1e-5, 1e-9])
    rows = _rows(emit_convergence_history(rep, 7))
    assert rows[0] == ["step", "outer_iteration", "normalized_norm"]
    assert len(rows) - 1 == rep.outer_iterations + 1
    assert [int(r[1]) for r in rows[1:]] == [0, 1, 2, 3]
    assert float(rows[-1][2]) == 1e-9 and rows[1][0] == "7"


def test_step_table():
    s = _summary("fsmsn_p", [(3, 4, 5), (2, 2, 2)])
    rows = _rows(emit_step_table(s))
    assert len(rows) == 3 and rows[1][3:6] == ["3", "4", "5"]
    assert float(rows[2][1]) == 20.0


def test_time_tag():
    assert time_tag(75 * DAY) == "t75d"
    assert time_tag(12.5 * DAY) == "t12.5d"


def test_field_round_trip(tmp_path):
    grid = build_cartesian_grid(4, 3, 1.0, 1.0)
    rng = np.random.default_rng(0)
    state = State(1e5 + rng.standard_normal(12) * 1e3, rng.uniform(0, 1, 12))
    sat, pres = emit_fields(state, grid, 75 * DAY, tmp_path)
    assert sat.name == "saturation_t75d.csv" and pres.name == "pressure_t75d.csv"
    assert sat.read_text().splitlines()[0].split(",")[1:] == ["4", "3"]
    t, s = read_field(sat)
    _, p = read_field(pres)
    assert t == 75.0 and s.shape == (3, 4)
    np.testing.assert_allclose(s.ravel(), state.s, rtol=1e-12, atol=0)
    np.testing.assert_allclose(p.ravel(), state.p, rtol=1e-12)


def test_unwritable_path_names_the_file(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError) as err:
        emit_convergence_history(SolverReport(residual_history=[1.0]), 0, blocker / "sub" / "h.csv")
    assert "h.csv" in str(err.value)
