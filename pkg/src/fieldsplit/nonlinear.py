"""Nonlinear solvers for one implicit time step.

All solvers start from the previous converged state and test convergence at
the top of each outer iteration with the coupled phase residual, scaled
cell-wise by ``rho_l V phi / dt`` (so the normalized residual is a
saturation-like, dimensionless quantity).

Solver roster:

``newton``    damped Newton on the coupled PPU residual
``sfi_ut``    pressure solve, freeze u_T, transport solve (IHU); no global step
``fsmsn_p``   pressure + fixed-pressure transport, then a PPU Newton step
``fsmsn_ut``  pressure + fixed-u_T transport, then an IHU Newton step
``mspin_p``   pressure + fixed-pressure transport, then the preconditioned
              global step ``J(p*, s^k) dx = L(p*, s^k) [delta_1; delta_2]``
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import FlowModel, FluxScheme, State, TransportVariant
from .linalg import LinearSolverError, block_assemble, lower_block_matvec, lu_solve

logger = logging.getLogger(__name__)

MAX_SATURATION_CHANGE = 0.2
MAX_OUTER = 200
MAX_INNER = 50
DEFAULT_OUTER_TOL = 1e-7
DEFAULT_SUBTOL = 1e-6
# every subproblem solve inside an outer iteration takes at least one Newton update
INNER_MIN_ITERATIONS = 1

SOLVER_NAMES = ("newton", "sfi_ut", "fsmsn_p", "fsmsn_ut", "mspin_p")


class NonConvergence(RuntimeError):
    """A solver hit its iteration cap or a singular linear system."""


class InnerSolveFailure(NonConvergence):
    pass


@dataclass
class SolverReport:
    outer_iterations: int = 0
    pressure_iterations: int = 0
    transport_iterations: int = 0
    residual_history: list = field(default_factory=list)
    converged: bool = False
    failure: str | None = None
    max_applied_ds: float = 0.0
    subproblem_tolerances: list = field(default_factory=list)

    @property
    def final_norm(self) -> float:
        return self.residual_history[-1] if self.residual_history else math.nan


# ---------------------------------------------------------------- norms


def normalized_residual_norm(residual, normalizer) -> float:
    """2-norm of the elementwise ratio ``residual / normalizer``."""
    normalizer = np.asarray(normalizer, dtype=float)
    if np.any(normalizer == 0.0):
        raise ValueError("normalizer has a zero entry")
    return float(np.linalg.norm(np.asarray(residual, dtype=float) / normalizer))


class ConvergenceNorms:
    """Normalizers ``rho_l V phi`` of the previous converged step, per unit time."""

    def __init__(self, model: FlowModel, dt: float):
        self.scale_w = model.m_w / dt
        self.scale_nw = model.m_nw / dt

    def full(self, r_nw, r_w) -> float:
        return max(
            normalized_residual_norm(r_nw, self.scale_nw),
            normalized_residual_norm(r_w, self.scale_w),
        )

    def pressure(self, g) -> float:
        return normalized_residual_norm(g, self.scale_nw + self.scale_w)

    def transport(self, h) -> float:
        return normalized_residual_norm(h, self.scale_w)


def damping_factor(delta_s, max_change: float = MAX_SATURATION_CHANGE) -> float:
    """Scalar step length keeping the largest saturation change at ``max_change``."""
    delta_s = np.asarray(delta_s, dtype=float)
    if delta_s.size == 0:
        return 1.0
    biggest = float(np.max(np.abs(delta_s)))
    if biggest <= max_change:
        return 1.0
    return max_change / biggest


# ------------------------------------------------------ subproblem tolerance


@dataclass(frozen=True)
class ToleranceStrategy:
    """``fixed`` (constant value) or one of the forcing sequences a1, a2, a3."""

    kind: str = "fixed"
    value: float = DEFAULT_SUBTOL

    def __post_init__(self):
        if self.kind not in ("fixed", "a1", "a2", "a3"):
            raise ValueError(f"unknown tolerance strategy {self.kind!r}")
        if self.kind == "fixed" and not self.value > 0:
            raise ValueError("fixed tolerance must be positive")

    @classmethod
    def parse(cls, text: str) -> "ToleranceStrategy":
        parts = str(text).strip().lower().split()
        if not parts:
            raise ValueError("empty tolerance strategy")
        try:
            if parts[0] in ("a1", "a2", "a3") and len(parts) == 1:
                return cls(parts[0])
            if parts[0] == "fixed" and len(parts) == 2:
                return cls("fixed", float(parts[1]))
            if len(parts) == 1:
                return cls("fixed", float(parts[0]))
        except ValueError:
            pass
        raise ValueError(f"invalid tolerance strategy {text!r}; expected a1, a2, a3 or 'fixed <value>'")

    def label(self) -> str:
        if self.kind == "fixed":
            return f"fixed {self.value:g}"
        return self.kind

    def __str__(self) -> str:
        return self.label()


def next_subproblem_tolerance(
    strategy: ToleranceStrategy,
    k: int,
    eps_prev: float,
    r_norm: float | None = None,
    prev_r_norm: float | None = None,
    prev_linear_norm: float | None = None,
    eps_outer: float = 0.0,
) -> float:
    """Tolerance for outer iteration ``k >= 1`` given the previous one.

    a1: eta = 0.1; a2: eta = 2**-(k+1); a3: eta from the mismatch between
    the new residual norm and the previous linear model, clamped to
    ``[eps_outer, eps_prev]``.  a3 uses eta = 1 when no previous global step
    exists.
    """
    kind = strategy.kind
    if kind == "fixed":
        return strategy.value
    if kind == "a1":
        return 0.1 * eps_prev
    if kind == "a2":
        return 2.0 ** (-(k + 1)) * eps_prev
    if prev_r_norm is None or prev_linear_norm is None or r_norm is None or prev_r_norm == 0.0:
        eta = 1.0
    else:
        eta = abs(r_norm - prev_linear_norm) / prev_r_norm
    return min(max(eta * eps_prev, eps_outer), eps_prev)


class _ToleranceTracker:
    def __init__(self, strategy: ToleranceStrategy, eps_outer: float):
        self.strategy = strategy
        self.eps_outer = eps_outer
        self.eps = 1.0
        self.prev_r_norm = None
        self.prev_linear_norm = None

    def next(self, k: int, r_norm: float) -> float:
        self.eps = next_subproblem_tolerance(
            self.strategy, k, self.eps, r_norm, self.prev_r_norm, self.prev_linear_norm, self.eps_outer
        )
        return self.eps

    def record_linear_model(self, r_norm: float, linear_norm: float) -> None:
        self.prev_r_norm = r_norm
        self.prev_linear_norm = linear_norm


# --------------------------------------------------------------- helpers


def _apply_update(state: State, dp, ds, report: SolverReport) -> State:
    tau = damping_factor(ds)
    s_new = state.s + tau * ds
    applied = float(np.max(np.abs(s_new - state.s))) if s_new.size else 0.0
    report.max_applied_ds = max(report.max_applied_ds, applied)
    return State(state.p + dp, s_new)


def _solve(A, b):
    try:
        return lu_solve(A, b)
    except LinearSolverError as exc:
        raise NonConvergence(f"linear solve failed: {exc}") from exc


def _linear_model_norm(sys, x_lin: State, x_new: State) -> float:
    step = np.concatenate([x_new.p - x_lin.p, x_new.s - x_lin.s])
    return float(np.linalg.norm(sys.residual + sys.matrix() @ step))


def _check_finite(nrm: float):
    if not math.isfinite(nrm):
        raise NonConvergence("non-finite residual")


# ---------------------------------------------------------- inner solves


def inner_pressure_solve(
    model: FlowModel,
    state: State,
    prev: State,
    dt: float,
    scheme: FluxScheme,
    tol: float,
    max_inner: int = MAX_INNER,
    norms: ConvergenceNorms | None = None,
    min_iterations: int = 0,
):
    """Newton on ``g(p, s)`` for fixed ``s``; returns ``(p*, iterations)``.

    The tolerance is tested before each iteration once ``min_iterations``
    updates have been taken.
    """
    norms = norms or ConvergenceNorms(model, dt)
    p = state.p.copy()
    s = state.s
    for it in range(max_inner + 1):
        sys = model.assemble_pressure(State(p, s), prev, dt, scheme, with_ds=False)
        nrm = norms.pressure(sys.residual)
        _check_finite(nrm)
        if nrm < tol and it >= min_iterations:
            return p, it
        if it == max_inner:
            break
        p = p + _solve(sys.blocks["g_p"], -sys.residual)
    raise InnerSolveFailure(f"pressure subproblem not converged in {max_inner} iterations")


def inner_transport_solve(
    model: FlowModel,
    state: State,
    prev: State,
    dt: float,
    variant: TransportVariant,
    tol: float,
    u_t=None,
    max_inner: int = MAX_INNER,
    norms: ConvergenceNorms | None = None,
    min_iterations: int = 0,
):
    """Damped Newton on ``h(p, s)`` at fixed p (or frozen u_T); returns ``(s*, iterations)``."""
    norms = norms or ConvergenceNorms(model, dt)
    p = state.p
    s = state.s.copy()
    for it in range(max_inner + 1):
        sys = model.assemble_transport(State(p, s), prev, dt, variant, u_t=u_t)
        nrm = norms.transport(sys.residual)
        _check_finite(nrm)
        if nrm < tol and it >= min_iterations:
            return s, it
        if it == max_inner:
            break
        ds = _solve(sys.blocks["h_s"], -sys.residual)
        s = s + damping_factor(ds) * ds
    raise InnerSolveFailure(f"transport subproblem not converged in {max_inner} iterations")


# ---------------------------------------------------------------- solvers


def _outer_loop(model, state_n, dt, eps, max_outer, scheme, body, report, strategy=None):
    norms = ConvergenceNorms(model, dt)
    tracker = _ToleranceTracker(strategy or ToleranceStrategy(), eps)
    x = state_n.copy()
    try:
        for k in range(1, max_outer + 2):
            sys = model.assemble_coupled(x, state_n, dt, scheme)
            nrm = norms.full(sys.r_nw, sys.r_w)
            report.residual_history.append(nrm)
            _check_finite(nrm)
            if nrm < eps:
                report.converged = True
                return x, report
            if k > max_outer:
                raise NonConvergence(f"outer loop not converged in {max_outer} iterations")
            x = body(k, x, sys, norms, tracker)
            report.outer_iterations += 1
    except NonConvergence as exc:
        report.converged = False
        report.failure = str(exc)
        logger.debug("step failed: %s", exc)
    return x, report


def newton_fim(
    model: FlowModel,
    state_n: State,
    dt: float,
    eps: float = DEFAULT_OUTER_TOL,
    max_iter: int = MAX_OUTER,
    scheme: FluxScheme = FluxScheme.PPU,
    strategy: ToleranceStrategy | None = None,
    max_inner: int = MAX_INNER,
):
    """Damped Newton on the coupled phase residual."""
    report = SolverReport()

    def body(k, x, sys, norms, tracker):
        dx = _solve(sys.matrix(), -sys.residual)
        m = model.num_cells
        return _apply_update(x, dx[:m], dx[m:], report)

    return _outer_loop(model, state_n, dt, eps, max_iter, scheme, body, report)


def _preconditioning_step(model, x, state_n, dt, k, sys, norms, tracker, report, scheme, variant, max_inner):
    tol = tracker.next(k, float(np.linalg.norm(sys.residual)))
    report.subproblem_tolerances.append(tol)
    p_star, n_p = inner_pressure_solve(model, x, state_n, dt, scheme, tol, max_inner, norms, INNER_MIN_ITERATIONS)
    report.pressure_iterations += n_p
    u_t = None
    if variant is TransportVariant.FIXED_UT:
        u_t = model.total_velocity(State(p_star, x.s)).F
    s_star, n_s = inner_transport_solve(
        model, State(p_star, x.s), state_n, dt, variant, tol,
        u_t=u_t, max_inner=max_inner, norms=norms, min_iterations=INNER_MIN_ITERATIONS,
    )
    report.transport_iterations += n_s
    return p_star, s_star


def sfi_ut(
    model: FlowModel,
    state_n: State,
    dt: float,
    eps: float = DEFAULT_OUTER_TOL,
    strategy: ToleranceStrategy | None = None,
    max_outer: int = MAX_OUTER,
    max_inner: int = MAX_INNER,
):
    """Sequential fully implicit iteration with a frozen total velocity."""
    report = SolverReport()

    def body(k, x, sys, norms, tracker):
        p_star, s_star = _preconditioning_step(
            model, x, state_n, dt, k, sys, norms, tracker, report,
            FluxScheme.IHU, TransportVariant.FIXED_UT, max_inner,
        )
        # no linear model: the a3 numerator reduces to the new residual norm
        tracker.record_linear_model(float(np.linalg.norm(sys.residual)), 0.0)
        return State(p_star, s_star)

    return _outer_loop(model, state_n, dt, eps, max_outer, FluxScheme.IHU, body, report, strategy)


def fsmsn(
    model: FlowModel,
    state_n: State,
    dt: float,
    variant: str = "ut",
    eps: float = DEFAULT_OUTER_TOL,
    strategy: ToleranceStrategy | None = None,
    max_outer: int = MAX_OUTER,
    max_inner: int = MAX_INNER,
):
    """Field-split preconditioning step followed by a Newton step at the preconditioned state."""
    if variant in ("ut", "uT", "u_t"):
        scheme, tvar = FluxScheme.IHU, TransportVariant.FIXED_UT
    elif variant == "p":
        scheme, tvar = FluxScheme.PPU, TransportVariant.FIXED_PRESSURE
    else:
        raise ValueError(f"unknown FSMSN variant {variant!r}")
    report = SolverReport()
    m = model.num_cells

    def body(k, x, sys, norms, tracker):
        p_star, s_star = _preconditioning_step(
            model, x, state_n, dt, k, sys, norms, tracker, report, scheme, tvar, max_inner
        )
        x_star = State(p_star, s_star)
        sys_star = model.assemble_coupled(x_star, state_n, dt, scheme)
        dx = _solve(sys_star.matrix(), -sys_star.residual)
        x_new = _apply_update(x_star, dx[:m], dx[m:], report)
        if tracker.strategy.kind == "a3":
            tracker.record_linear_model(
                float(np.linalg.norm(sys_star.residual)), _linear_model_norm(sys_star, x_star, x_new)
            )
        return x_new

    return _outer_loop(model, state_n, dt, eps, max_outer, scheme, body, report, strategy)


def mspin_step(blocks, delta1, delta2):
    """Global MSPIN update ``dx = J^{-1} L F`` from field-split blocks at (p*, s^k)."""
    v1, v2 = lower_block_matvec(blocks.App, blocks.Asp, blocks.Ass, delta1, delta2)
    return _solve(block_assemble(blocks), np.concatenate([v1, v2]))


def mspin(
    model: FlowModel,
    state_n: State,
    dt: float,
    eps: float = DEFAULT_OUTER_TOL,
    strategy: ToleranceStrategy | None = None,
    max_outer: int = MAX_OUTER,
    max_inner: int = MAX_INNER,
):
    """Multiplicative Schwarz preconditioned inexact Newton, fixed-pressure transport."""
    report = SolverReport()
    m = model.num_cells
    scheme, tvar = FluxScheme.PPU, TransportVariant.FIXED_PRESSURE

    def body(k, x, sys, norms, tracker):
        tol = tracker.next(k, float(np.linalg.norm(sys.residual)))
        report.subproblem_tolerances.append(tol)
        p_star, n_p = inner_pressure_solve(model, x, state_n, dt, scheme, tol, max_inner, norms, INNER_MIN_ITERATIONS)
        report.pressure_iterations += n_p
        x_lin = State(p_star, x.s)
        sys_lin = model.assemble_coupled(x_lin, state_n, dt, scheme)
        s_star, n_s = inner_transport_solve(
            model, x_lin, state_n, dt, tvar, tol,
            max_inner=max_inner, norms=norms, min_iterations=INNER_MIN_ITERATIONS,
        )
        report.transport_iterations += n_s
        dx = mspin_step(sys_lin.field_split_blocks(), p_star - x.p, s_star - x.s)
        x_new = _apply_update(x, dx[:m], dx[m:], report)
        if tracker.strategy.kind == "a3":
            tracker.record_linear_model(
                float(np.linalg.norm(sys_lin.residual)), _linear_model_norm(sys_lin, x_lin, x_new)
            )
        return x_new

    return _outer_loop(model, state_n, dt, eps, max_outer, scheme, body, report, strategy)


def solve_step(
    solver: str,
    model: FlowModel,
    state_n: State,
    dt: float,
    eps: float = DEFAULT_OUTER_TOL,
    strategy: ToleranceStrategy | None = None,
    max_outer: int = MAX_OUTER,
    max_inner: int = MAX_INNER,
):
    """Dispatch one time step to the named solver; returns ``(state, report)``."""
    if solver == "newton":
        return newton_fim(model, state_n, dt, eps, max_outer)
    if solver == "sfi_ut":
        return sfi_ut(model, state_n, dt, eps, strategy, max_outer, max_inner)
    if solver == "fsmsn_p":
        return fsmsn(model, state_n, dt, "p", eps, strategy, max_outer, max_inner)
    if solver == "fsmsn_ut":
        return fsmsn(model, state_n, dt, "ut", eps, strategy, max_outer, max_inner)
    if solver == "mspin_p":
        return mspin(model, state_n, dt, eps, strategy, max_outer, max_inner)
    raise ValueError(f"unknown solver {solver!r}; expected one of {', '.join(SOLVER_NAMES)}")


def solver_scheme(solver: str) -> FluxScheme:
    """Flux scheme whose coupled residual certifies convergence for ``solver``."""
    return FluxScheme.IHU if solver in ("sfi_ut", "fsmsn_ut") else FluxScheme.PPU
