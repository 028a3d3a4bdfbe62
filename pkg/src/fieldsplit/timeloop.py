"""Constant-step time marching with restart on nonlinear failure."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constitutive import mobilities
from .discretization import FlowModel, InterfaceFlux, State
from .geometry import DAY, ConfigurationError
from .nonlinear import (
    DEFAULT_OUTER_TOL,
    MAX_INNER,
    MAX_OUTER,
    SolverReport,
    ToleranceStrategy,
    solve_step,
    solver_scheme,
)

logger = logging.getLogger(__name__)

# relative slack when deciding that the clock has reached t_max
_TIME_SLACK = 1e-9


@dataclass(frozen=True)
class Schedule:
    """Constant base step ``dt`` up to ``t_max`` (both in seconds)."""

    t_max: float
    dt: float
    restart_factor: float = 0.5
    max_retries: int = 4

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("time step must be positive")
        if not self.t_max >= self.dt * (1 - _TIME_SLACK):
            raise ConfigurationError("t_max must be at least one time step")
        if not 0 < self.restart_factor < 1:
            raise ConfigurationError("restart factor must lie in (0, 1)")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be non-negative")

    @property
    def num_steps(self) -> int:
        return math.ceil(self.t_max / self.dt * (1 - _TIME_SLACK))

    def with_dt(self, dt: float) -> "Schedule":
        return Schedule(self.t_max, dt, self.restart_factor, self.max_retries)


@dataclass
class StepRecord:
    index: int
    time: float  # end of step, s
    dt: float
    report: SolverReport
    max_cfl: float = 0.0
    failed_attempts: list = field(default_factory=list)


@dataclass
class RunSummary:
    solver: str
    strategy: str
    dt: float = 0.0  # base step
    steps: list = field(default_factory=list)
    failed_attempts: list = field(default_factory=list)
    aborted: bool = False
    failure: str | None = None
    max_cfl: float = 0.0
    injected_volume: float = 0.0
    produced_volume: float = 0.0
    produced_water_volume: float = 0.0
    pore_volume: float = 0.0
    initial_state: State | None = None
    final_state: State | None = None
    time: float = 0.0

    @property
    def converged(self) -> bool:
        return not self.aborted

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    @property
    def outer_iterations(self) -> int:
        return sum(r.report.outer_iterations for r in self.steps)

    @property
    def pressure_iterations(self) -> int:
        return sum(r.report.pressure_iterations for r in self.steps)

    @property
    def transport_iterations(self) -> int:
        return sum(r.report.transport_iterations for r in self.steps)

    @property
    def failed_outer_iterations(self) -> int:
        return sum(r.outer_iterations for r in self.failed_attempts)

    @property
    def iterations_per_step(self) -> float:
        return self.outer_iterations / self.num_steps if self.steps else math.nan

    @property
    def pvi(self) -> float:
        return self.injected_volume / self.pore_volume if self.pore_volume else 0.0

    def volume_balance_error(self, model: FlowModel) -> float:
        """Relative mismatch between net injected water and stored water."""
        if self.injected_volume == 0.0:
            return 0.0
        stored = float(np.sum(model.pore_volume * (self.final_state.s - self.initial_state.s)))
        net = self.injected_volume - self.produced_water_volume
        return abs(net - stored) / self.injected_volume


def cfl_numbers(model: FlowModel, fluxes: InterfaceFlux, dt: float):
    """Per-phase, per-cell outflow throughput ``dt * sum(out) / (V phi rho)``.

    Returns ``(cfl, max_cfl)`` with ``cfl`` of shape ``(2, num_cells)``, row
    0 for the wetting phase and row 1 for the non-wetting phase.
    """
    m = model.num_cells
    out = np.zeros((2, m))
    for row, (flux, rho) in enumerate(
        ((fluxes.water, model.fluid.rho_w), (fluxes.oil, model.fluid.rho_nw))
    ):
        F = flux.F
        outflow = np.bincount(model.ik, weights=np.maximum(F, 0.0), minlength=m)
        outflow += np.bincount(model.il, weights=np.maximum(-F, 0.0), minlength=m)
        out[row] = dt * outflow / (model.pore_volume * rho)
    return out, float(out.max()) if out.size else 0.0


def _well_volumes(model: FlowModel, s: np.ndarray, dt: float):
    inj = model.wells.injection_rate * dt
    prod = model.wells.production_rate * dt
    water = 0.0
    if model.wells.producers:
        mob = mobilities(s, model.fluid)
        fw = mob.lambda_w / mob.lambda_t
        water = sum(q * fw[c] for c, q in model.wells.producers) * dt
    return inj, prod, water


StepSolver = Callable[..., tuple]


def run(
    model: FlowModel,
    initial: State,
    schedule: Schedule,
    solver: str,
    strategy: ToleranceStrategy | None = None,
    eps: float = DEFAULT_OUTER_TOL,
    max_outer: int = MAX_OUTER,
    max_inner: int = MAX_INNER,
    on_step: Callable[[StepRecord, State], None] | None = None,
    step_solver: StepSolver = solve_step,
) -> RunSummary:
    """March from t=0 to ``schedule.t_max``.

    A failed step is retried from the last converged state with the step
    multiplied by ``schedule.restart_factor``, at most
    ``schedule.max_retries`` times; after an accepted reduced step the base
    step is used again.  When all retries fail the run stops with
    ``summary.aborted`` set.
    """
    strategy = strategy or ToleranceStrategy()
    summary = RunSummary(
        solver=solver,
        strategy=strategy.label(),
        dt=schedule.dt,
        pore_volume=float(np.sum(model.pore_volume)),
        initial_state=initial.copy(),
    )
    scheme = solver_scheme(solver)
    state = initial.copy()
    t = 0.0
    index = 0
    while t < schedule.t_max * (1 - _TIME_SLACK):
        dt_base = min(schedule.dt, schedule.t_max - t)
        dt = dt_base
        failed = []
        for attempt in range(schedule.max_retries + 1):
            new_state, report = step_solver(
                solver, model, state, dt, eps=eps, strategy=strategy,
                max_outer=max_outer, max_inner=max_inner,
            )
            if report.converged:
                break
            logger.info(
                "step %d (t=%.6g d, dt=%.6g d) failed after %d outer iterations: %s",
                index, t / DAY, dt / DAY, report.outer_iterations, report.failure,
            )
            failed.append(report)
            dt *= schedule.restart_factor
        summary.failed_attempts.extend(failed)
        if not report.converged:
            summary.aborted = True
            summary.failure = (
                f"step {index} at t={t / DAY:g} days failed after "
                f"{schedule.max_retries} restarts: {report.failure}"
            )
            logger.warning(summary.failure)
            break
        t += dt
        # the final step is truncated so that the clock lands on t_max exactly
        if abs(t - schedule.t_max) <= _TIME_SLACK * schedule.t_max:
            t = schedule.t_max
        _, max_cfl = cfl_numbers(model, model.fluxes(new_state, scheme), dt)
        inj, prod, water = _well_volumes(model, new_state.s, dt)
        summary.injected_volume += inj
        summary.produced_volume += prod
        summary.produced_water_volume += water
        summary.max_cfl = max(summary.max_cfl, max_cfl)
        record = StepRecord(index, t, dt, report, max_cfl, failed)
        summary.steps.append(record)
        state = new_state
        if on_step is not None:
            on_step(record, state)
        index += 1
    summary.final_state = state
    summary.time = t
    return summary
