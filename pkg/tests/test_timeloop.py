import numpy as np
import pytest

from fieldsplit.constitutive import FluidProps
from fieldsplit.discretization import FlowModel, InterfaceFlux, PhaseFlux, State, WellSet
from fieldsplit.geometry import DAY, MILLIDARCY, ConfigurationError, RockProps, build_cartesian_grid
from fieldsplit.nonlinear import SolverReport, ToleranceStrategy
from fieldsplit.scenarios import bl_1d_case, gravity_segregation
from fieldsplit.timeloop import Schedule, cfl_numbers, run


def _pair_model(porosity=0.2):
    grid = build_cartesian_grid(2, 1, 1.0, 1.0, "horizontal", thickness=1.0)
    rock = RockProps.uniform(2, porosity, 100 * MILLIDARCY)
    return FlowModel(grid, rock, FluidProps(rho_w=1000.0, rho_nw=800.0), gravity=0.0)


def _flux(fw, fo):
    z = np.zeros(1)
    return InterfaceFlux(PhaseFlux(np.array([fw]), z, z, z, z), PhaseFlux(np.array([fo]), z, z, z, z))


def test_cfl_zero_without_flow():
    model = _pair_model()
    cfl, mx = cfl_numbers(model, _flux(0.0, 0.0), DAY)
    assert mx == 0.0 and np.all(cfl == 0.0)


def test_cfl_single_interface_by_hand():
    # 0.1 kg/s of water out of cell 0 over 1 s into a 0.2 m^3 pore volume of 1000 kg/m^3
    model = _pair_model()
    cfl, mx = cfl_numbers(model, _flux(0.1, -0.08), 1.0)
    assert cfl[0, 0] == pytest.approx(0.1 / (0.2 * 1000.0))
    assert cfl[0, 1] == 0.0
    assert cfl[1, 1] == pytest.approx(0.08 / (0.2 * 800.0))
    assert cfl[1, 0] == 0.0
    assert mx == pytest.approx(max(cfl[0, 0], cfl[1, 1]))


def test_cfl_scales_linearly_with_step():
    model = _pair_model()
    a = cfl_numbers(model, _flux(0.3, 0.1), 2.0)[1]
    b = cfl_numbers(model, _flux(0.3, 0.1), 6.0)[1]
    assert b == pytest.approx(3 * a, rel=1e-14)


def test_schedule_validation():
    assert Schedule(500 * DAY, 10 * DAY).num_steps == 50
    assert Schedule(25 * DAY, 10 * DAY).num_steps == 3
    for bad in (dict(t_max=DAY, dt=0.0), dict(t_max=DAY, dt=2 * DAY),
                dict(t_max=DAY, dt=DAY, restart_factor=1.0), dict(t_max=DAY, dt=DAY, max_retries=-1)):
        with pytest.raises(ConfigurationError):
            Schedule(**bad)


class _StubSolver:
    """Fails whenever the step exceeds ``limit``; records every requested step."""

    def __init__(self, limit):
        self.limit = limit
        self.calls = []

    def __call__(self, solver, model, state, dt, **kw):
        self.calls.append(dt)
        report = SolverReport(outer_iterations=3, residual_history=[1.0, 0.1, 0.01, 0.0])
        if dt > self.limit:
            report.failure = "stub failure"
            return state, report
        report.converged = True
        return state, report


def test_restart_halves_until_abort():
    model = _pair_model()
    stub = _StubSolver(limit=0.0)
    summary = run(model, State([1e5, 1e5], [0.5, 0.5]), Schedule(10 * DAY, 10 * DAY), "newton", step_solver=stub)
    assert stub.calls == [10 * DAY / 2**i for i in range(5)]
    assert summary.aborted and not summary.converged
    assert "failed after 4 restarts" in summary.failure
    assert summary.num_steps == 0
    assert len(summary.failed_attempts) == 5


def test_restart_recovers_then_returns_to_base_step():
    model = _pair_model()
    stub = _StubSolver(limit=3 * DAY)
    summary = run(model, State([1e5, 1e5], [0.5, 0.5]), Schedule(20 * DAY, 10 * DAY), "newton", step_solver=stub)
    assert summary.converged
    # each step of 10 d fails twice and is accepted at 2.5 d
    assert stub.calls[:3] == [10 * DAY, 5 * DAY, 2.5 * DAY]
    assert stub.calls[3] == 10 * DAY
    assert [r.dt for r in summary.steps][:2] == [2.5 * DAY, 2.5 * DAY]
    assert summary.time == pytest.approx(20 * DAY)
    assert summary.failed_outer_iterations == 3 * len(summary.failed_attempts)


def test_time_accounting_with_truncated_final_step():
    model = _pair_model()
    stub = _StubSolver(limit=np.inf)
    summary = run(model, State([1e5, 1e5], [0.5, 0.5]), Schedule(25 * DAY, 10 * DAY), "newton", step_solver=stub)
    assert [r.dt / DAY for r in summary.steps] == pytest.approx([10, 10, 5])
    assert summary.time == 25 * DAY
    assert summary.steps[-1].time == 25 * DAY
    assert sum(r.dt for r in summary.steps) == pytest.approx(25 * DAY, rel=1e-12)


def test_cumulative_counts_are_step_sums():
    sc = gravity_segregation(n=8, dt_days=10, t_max_days=40)
    summary = run(sc.model, sc.initial, sc.schedule, "fsmsn_ut", ToleranceStrategy("a1"))
    assert summary.converged and summary.num_steps == 4
    assert summary.outer_iterations == sum(r.report.outer_iterations for r in summary.steps)
    assert summary.pressure_iterations == sum(r.report.pressure_iterations for r in summary.steps)
    assert summary.transport_iterations == sum(r.report.transport_iterations for r in summary.steps)
    assert summary.iterations_per_step == summary.outer_iterations / 4
    assert summary.max_cfl == max(r.max_cfl for r in summary.steps) > 0


def test_on_step_callback_sees_every_accepted_step():
    sc = gravity_segregation(n=6, dt_days=10, t_max_days=30)
    seen = []
    run(sc.model, sc.initial, sc.schedule, "newton", on_step=lambda rec, st: seen.append((rec.index, st.s.copy())))
    assert [i for i, _ in seen] == [0, 1, 2]


@pytest.mark.parametrize("solver", ["newton", "fsmsn_ut", "sfi_ut"])
def test_volume_balance_with_wells(solver):
    sc = bl_1d_case(n=20, num_steps=10)
    summary = run(sc.model, sc.initial, sc.schedule, solver, ToleranceStrategy("a1"), eps=1e-11)
    assert summary.converged
    assert summary.pvi == pytest.approx(0.2, rel=1e-12)
    assert summary.volume_balance_error(sc.model) <= 1e-8


def test_closed_box_conserves_water():
    sc = gravity_segregation(n=8, dt_days=20, t_max_days=60)
    summary = run(sc.model, sc.initial, sc.schedule, "newton", eps=1e-10)
    stored0 = np.sum(sc.model.pore_volume * sc.initial.s)
    stored1 = np.sum(sc.model.pore_volume * summary.final_state.s)
    assert stored1 == pytest.approx(stored0, rel=1e-9)
    assert summary.injected_volume == 0.0 and summary.volume_balance_error(sc.model) == 0.0


def test_wells_volumes_accumulate():
    grid = build_cartesian_grid(3, 1, 1.0, 1.0, "horizontal", thickness=1.0)
    rock = RockProps.uniform(3, 0.2, 100 * MILLIDARCY)
    q = 1e-7
    model = FlowModel(grid, rock, FluidProps(), WellSet([(0, q)], [(2, q)]), gravity=0.0, p_ref=1e5)
    stub = _StubSolver(limit=np.inf)
    summary = run(model, State(np.full(3, 1e5), np.zeros(3)), Schedule(3 * DAY, DAY), "newton", step_solver=stub)
    assert summary.injected_volume == pytest.approx(3 * DAY * q)
    assert summary.produced_volume == pytest.approx(3 * DAY * q)
    assert summary.produced_water_volume == 0.0
