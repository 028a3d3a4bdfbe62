"""Benchmark problem builders.

Every builder returns a :class:`Scenario` whose initial pressure has been
equilibrated with the initial saturation, so the first time step starts
from a consistent state.  Builders are deterministic in their arguments.
"""

from __future__ import annotations

import inspect
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .constitutive import FluidProps
from .discretization import FlowModel, FluxScheme, State, WellSet
from .geometry import DAY, MILLIDARCY, ConfigurationError, RockProps, build_cartesian_grid
from .linalg import lu_solve
from .nonlinear import ConvergenceNorms, solve_step, solver_scheme
from .timeloop import Schedule, cfl_numbers

logger = logging.getLogger(__name__)

FT = 0.3048  # m
SURFACE_PRESSURE = 1.0e5  # Pa, pressure at depth zero


@dataclass
class Scenario:
    name: str
    model: FlowModel
    initial: State
    schedule: Schedule
    seed: int | None = None
    description: str = ""
    params: dict = field(default_factory=dict)

    def audit(self) -> None:
        """Raise :class:`ConfigurationError` if the pieces do not fit together."""
        m = self.model.num_cells
        if self.initial.p.shape != (m,) or self.initial.s.shape != (m,):
            raise ConfigurationError(f"{self.name}: initial state size does not match {m} cells")
        if self.model.rock.porosity.size != m:
            raise ConfigurationError(f"{self.name}: rock size does not match grid")
        self.model.wells.validate(m)
        if np.any(self.initial.s < 0.0) or np.any(self.initial.s > 1.0):
            raise ConfigurationError(f"{self.name}: initial saturation outside [0, 1]")
        if not np.all(np.isfinite(self.initial.p)):
            raise ConfigurationError(f"{self.name}: non-finite initial pressure")

    def with_time_step(self, dt: float, t_max: float | None = None) -> "Scenario":
        sched = Schedule(self.schedule.t_max if t_max is None else t_max, dt,
                         self.schedule.restart_factor, self.schedule.max_retries)
        return replace(self, schedule=sched)


# ------------------------------------------------------------------ helpers


def hydrostatic_pressure(model: FlowModel, s: np.ndarray) -> np.ndarray:
    """Cell-wise ``p0 + rho(s) g d`` with a saturation-weighted density."""
    rho = model.fluid.rho_w * s + model.fluid.rho_nw * (1.0 - s)
    return SURFACE_PRESSURE + rho * model.gravity * model.grid.depth


def equilibrate_pressure(
    model: FlowModel, s: np.ndarray, dt: float, tol: float = 1e-9, max_iter: int = 20
) -> State:
    """Solve the pressure equation at the fixed saturation ``s``.

    Starts from a hydrostatic guess and stops at ``tol`` or when the norm
    stalls at round-off level.  The anchor reference is moved onto the
    result so that the anchor term is exactly zero there.
    """
    model.p_ref = float(hydrostatic_pressure(model, s)[model.anchor_cell])
    state = State(hydrostatic_pressure(model, s), s)
    norms = ConvergenceNorms(model, dt)
    best = math.inf
    for _ in range(max_iter):
        sys = model.assemble_pressure(state, state, dt, FluxScheme.PPU, with_ds=False)
        nrm = norms.pressure(sys.residual)
        if nrm < tol or nrm > 0.5 * best:
            break
        best = nrm
        state = state.with_p(state.p + lu_solve(sys.blocks["g_p"], -sys.residual))
    model.p_ref = float(state.p[model.anchor_cell])
    return state


def lognormal_permeability(
    shape: tuple[int, int],
    seed: int,
    variance: float,
    mean_md: float = 100.0,
    correlation_cells: float = 4.0,
) -> np.ndarray:
    """Correlated log-normal permeability in m^2, returned row-major.

    White noise is smoothed with a Gaussian kernel and rescaled to unit
    standard deviation, so ``variance`` is the variance of ``ln k``.
    """
    if variance < 0:
        raise ConfigurationError("variance must be non-negative")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(shape)
    smooth = ndimage.gaussian_filter(noise, sigma=correlation_cells, mode="wrap")
    std = smooth.std()
    if std > 0:
        smooth = (smooth - smooth.mean()) / std
    log_k = math.log(mean_md) + math.sqrt(variance) * smooth
    return (np.exp(log_k) * MILLIDARCY).ravel()


def channel_mask(nx: int, nz: int, seed: int, num_channels: int = 6, width: int = 1) -> np.ndarray:
    """Seeded straight and L-shaped channels as a boolean (nz, nx) mask."""
    rng = np.random.default_rng(seed)
    mask = np.zeros((nz, nx), dtype=bool)
    for _ in range(num_channels):
        row = int(rng.integers(0, nz))
        col = int(rng.integers(0, nx))
        legs = 1 + int(rng.integers(0, 2))  # straight or L-shaped
        horizontal = bool(rng.integers(0, 2))
        for _ in range(legs):
            if horizontal:
                length = int(rng.integers(nx // 3, nx))
                step = 1 if rng.random() < 0.5 else -1
                end = int(np.clip(col + step * length, 0, nx - 1))
                lo, hi = sorted((col, end))
                mask[row : row + width, lo : hi + 1] = True
                col = end
            else:
                length = int(rng.integers(nz // 3, nz))
                step = 1 if rng.random() < 0.5 else -1
                end = int(np.clip(row + step * length, 0, nz - 1))
                lo, hi = sorted((row, end))
                mask[lo : hi + 1, col : col + width] = True
                row = end
            horizontal = not horizontal
    return mask


def five_spot_wells(nx: int, ny: int, rate: float) -> WellSet:
    """Center injector and four corner producers sharing ``rate`` (m^3/s)."""
    center = (ny // 2) * nx + nx // 2
    corners = [0, nx - 1, (ny - 1) * nx, ny * nx - 1]
    return WellSet(injectors=[(center, rate)], producers=[(c, rate / 4.0) for c in corners])


def _finish(name, model, s0, t_max, dt, seed=None, description="", **params) -> Scenario:
    initial = equilibrate_pressure(model, np.asarray(s0, dtype=float), dt)
    scenario = Scenario(name, model, initial, Schedule(t_max, dt), seed, description, params)
    scenario.audit()
    return scenario


# ---------------------------------------------------------------- builders


def gravity_segregation(
    n: int = 100,
    dt_days: float = 10.0,
    t_max_days: float = 500.0,
    porosity: float = 0.8,
    permeability_md: float = 200.0,
    size: float = 30.48,
) -> Scenario:
    """Lock exchange in a closed square x-z box, water on the left.

    The case description fixes everything except porosity; the default 0.8
    best matches reference iteration counts of the five solvers.
    """
    grid = build_cartesian_grid(n, n, size / n, size / n, "vertical")
    rock = RockProps.uniform(grid.num_cells, porosity, permeability_md * MILLIDARCY)
    fluid = FluidProps(rho_w=1025.0, rho_nw=785.0, mu_w=3e-4, mu_nw=3e-3)
    model = FlowModel(grid, rock, fluid)
    x, _ = grid.cell_centers()
    s0 = (x < 0.5 * size).astype(float)
    return _finish(
        "gravity_segregation", model, s0, t_max_days * DAY, dt_days * DAY,
        description="closed box, buoyancy-driven counter-current flow",
        n=n, porosity=porosity,
    )


def heterogeneous_five_spot(
    seed: int = 0,
    variance: float = 1.0,
    nx: int = 60,
    ny: int = 220,
    dx: float = 20 * FT,
    dy: float = 10 * FT,
    thickness: float = 2 * FT,
    porosity: float = 0.2,
    pvi: float = 0.1,
    t_max_days: float = 500.0,
    dt_days: float = 50.0,
    correlation_cells: float = 4.0,
) -> Scenario:
    """Horizontal layer with a synthetic log-normal permeability and five-spot wells."""
    grid = build_cartesian_grid(nx, ny, dx, dy, "horizontal", thickness=thickness)
    perm = lognormal_permeability((ny, nx), seed, variance, correlation_cells=correlation_cells)
    rock = RockProps(np.full(grid.num_cells, porosity), perm)
    fluid = FluidProps(rho_w=1025.0, rho_nw=849.0, mu_w=3e-4, mu_nw=3e-3)
    pore_volume = float(np.sum(grid.cell_volume) * porosity)
    rate = pvi * pore_volume / (t_max_days * DAY)
    model = FlowModel(grid, rock, fluid, five_spot_wells(nx, ny, rate))
    return _finish(
        "heterogeneous_five_spot", model, np.zeros(grid.num_cells), t_max_days * DAY, dt_days * DAY,
        seed=seed, description="viscous-dominated horizontal five-spot",
        variance=variance, nx=nx, ny=ny,
    )


def tilted_buoyancy(
    seed: int = 1,
    rate: float = 9.352,
    tilt_deg: float = 60.0,
    variance: float = 1.0,
    nx: int = 60,
    ny: int = 220,
    dx: float = 20 * FT,
    dy: float = 10 * FT,
    thickness: float = 2 * FT,
    porosity: float = 0.2,
    pvi: float = 0.08,
    num_steps: int = 20,
) -> Scenario:
    """Tilted heterogeneous layer; ``rate`` is the injection rate in m^3/day.

    The total time follows from the injected pore volume and the rate.
    """
    if not rate > 0:
        raise ConfigurationError("injection rate must be positive")
    grid = build_cartesian_grid(nx, ny, dx, dy, "horizontal", tilt_deg=tilt_deg, thickness=thickness)
    perm = lognormal_permeability((ny, nx), seed, variance)
    rock = RockProps(np.full(grid.num_cells, porosity), perm)
    fluid = FluidProps(rho_w=1025.0, rho_nw=849.0, mu_w=3e-4, mu_nw=3e-3)
    q = rate / DAY
    model = FlowModel(grid, rock, fluid, five_spot_wells(nx, ny, q))
    t_max = pvi * float(np.sum(model.pore_volume)) / q
    return _finish(
        "tilted_buoyancy", model, np.zeros(grid.num_cells), t_max, t_max / num_steps,
        seed=seed, description="tilted layer, viscous and buoyancy forces compete",
        rate=rate, tilt_deg=tilt_deg,
    )


def fractured_channels(
    seed: int = 0,
    nx: int = 80,
    nz: int = 40,
    dx: float = 2.0,
    dz: float = 1.0,
    thickness: float = 10.0,
    porosity: float = 0.2,
    background_md: float = 10.0,
    contrast: float = 1.0e4,
    num_channels: int = 6,
    perforations: int = 20,
    pvi: float = 0.56,
    t_max_days: float = 1500.0,
    dt_days: float = 100.0,
) -> Scenario:
    """x-z section with high-permeability channels; injector top right, producer bottom left."""
    if contrast < 1.0e4:
        raise ConfigurationError("channel contrast must be at least 1e4")
    if perforations > nz:
        raise ConfigurationError("more perforations than cells in a column")
    grid = build_cartesian_grid(nx, nz, dx, dz, "vertical", thickness=thickness)
    mask = channel_mask(nx, nz, seed, num_channels)
    perm = np.where(mask, background_md * contrast, background_md).ravel() * MILLIDARCY
    rock = RockProps(np.full(grid.num_cells, porosity), perm)
    fluid = FluidProps(rho_w=1025.0, rho_nw=785.0, mu_w=3e-4, mu_nw=3e-3)
    q = pvi * float(np.sum(grid.cell_volume) * porosity) / (t_max_days * DAY)
    inj_cells = [grid.cell_index(nx - 1, row) for row in range(perforations)]
    prod_cells = [grid.cell_index(0, nz - 1 - row) for row in range(perforations)]
    wells = WellSet(
        injectors=[(c, q / perforations) for c in inj_cells],
        producers=[(c, q / perforations) for c in prod_cells],
    )
    model = FlowModel(grid, rock, fluid, wells)
    return _finish(
        "fractured_channels", model, np.zeros(grid.num_cells), t_max_days * DAY, dt_days * DAY,
        seed=seed, description="channelized x-z section with competing forces",
        num_channels=num_channels, contrast=contrast,
    )


def two_cell_case(
    s0: tuple[float, float] = (0.9, 0.1),
    size: float = 1.0,
    porosity: float = 0.2,
    permeability_md: float = 200.0,
    dt_days: float = 10.0,
    num_steps: int = 1,
) -> Scenario:
    """Two stacked cells; the heavier fluid starts on top."""
    grid = build_cartesian_grid(1, 2, size, size, "vertical")
    rock = RockProps.uniform(2, porosity, permeability_md * MILLIDARCY)
    model = FlowModel(grid, rock, FluidProps(rho_w=1025.0, rho_nw=785.0))
    return _finish(
        "two_cell", model, np.array(s0, dtype=float), num_steps * dt_days * DAY, dt_days * DAY,
        description="two-cell counter-current exchange",
    )


def bl_1d_case(
    n: int = 100,
    length: float = 100.0,
    porosity: float = 0.2,
    permeability_md: float = 100.0,
    pvi: float = 0.2,
    t_max_days: float = 100.0,
    num_steps: int = 100,
) -> Scenario:
    """Horizontal Buckley-Leverett column, injector in the first cell, producer in the last."""
    if n < 2:
        raise ConfigurationError("a Buckley-Leverett column needs at least two cells")
    dx = length / n
    grid = build_cartesian_grid(n, 1, dx, 1.0, "horizontal", thickness=1.0)
    rock = RockProps.uniform(n, porosity, permeability_md * MILLIDARCY)
    q = pvi * length * porosity / (t_max_days * DAY)
    wells = WellSet(injectors=[(0, q)], producers=[(n - 1, q)])
    model = FlowModel(grid, rock, FluidProps(), wells)
    t_max = t_max_days * DAY
    return _finish(
        "bl_1d", model, np.zeros(n), t_max, t_max / num_steps,
        description="1D displacement column", n=n,
    )


SCENARIOS = {
    "gravity_segregation": gravity_segregation,
    "heterogeneous_five_spot": heterogeneous_five_spot,
    "tilted_buoyancy": tilted_buoyancy,
    "fractured_channels": fractured_channels,
    "two_cell": two_cell_case,
    "bl_1d": bl_1d_case,
}


def build_scenario(name: str, **overrides) -> Scenario:
    try:
        builder = SCENARIOS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown scenario {name!r}; available: {', '.join(sorted(SCENARIOS))}"
        ) from None
    accepted = inspect.signature(builder).parameters
    unknown = sorted(set(overrides) - set(accepted))
    if unknown:
        raise ConfigurationError(f"scenario {name!r} does not accept {', '.join(unknown)}")
    return builder(**overrides)


def front_position(s: np.ndarray, threshold: float = 0.1) -> int:
    """Index of the first cell whose saturation drops below ``threshold``."""
    below = np.flatnonzero(np.asarray(s) < threshold)
    return int(below[0]) if below.size else len(s)


def match_cfl_time_step(
    scenario: Scenario,
    target_cfl: float,
    solver: str = "newton",
    rel_tol: float = 0.05,
    max_iter: int = 12,
) -> Scenario:
    """Rescale the base step so that the first step's max CFL hits ``target_cfl``.

    The max CFL of the first step is nearly proportional to ``dt``, so a
    secant-free fixed-point update ``dt *= target / cfl`` converges in a few
    passes.  The returned scenario keeps ``t_max`` and uses the new step.
    """
    if not target_cfl > 0:
        raise ConfigurationError("target CFL must be positive")
    dt = scenario.schedule.dt
    scheme = solver_scheme(solver)
    for _ in range(max_iter):
        state, report = solve_step(solver, scenario.model, scenario.initial, dt)
        if not report.converged:
            dt *= 0.5
            continue
        _, cfl = cfl_numbers(scenario.model, scenario.model.fluxes(state, scheme), dt)
        if cfl == 0.0:
            raise ConfigurationError("no flow in the first step; CFL cannot be matched")
        if abs(cfl / target_cfl - 1.0) <= rel_tol:
            break
        dt *= target_cfl / cfl
        dt = min(dt, scenario.schedule.t_max)
    else:
        logger.warning("CFL matching did not reach %.3g within %d passes", target_cfl, max_iter)
    return scenario.with_time_step(dt)
