"""Command-line entry point.

    fieldsplit run CONFIG        one run per config section
    fieldsplit sweep CONFIG      every solver x tolerance x dt combination
    fieldsplit list-scenarios

Exit status: 0 when every run converged, 2 when at least one run did not
converge (d.n.c.), 1 on configuration or I/O errors.  The output root can be
redirected with the ``FIELDSPLIT_OUTPUT_ROOT`` environment variable.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, parse_config
from .geometry import DAY, ConfigurationError
from .reporting import (
    DNC,
    emit_convergence_history,
    emit_fields,
    emit_iteration_table,
    emit_step_table,
    fmt,
)
from .scenarios import SCENARIOS, build_scenario
from .timeloop import RunSummary, run

logger = logging.getLogger("fieldsplit")

ENV_OUTPUT_ROOT = "FIELDSPLIT_OUTPUT_ROOT"
EXIT_OK, EXIT_ERROR, EXIT_DNC = 0, 1, 2


def output_root(cfg: RunConfig) -> Path:
    root = os.environ.get(ENV_OUTPUT_ROOT)
    out = Path(cfg.output)
    if root and not out.is_absolute():
        return Path(root) / out
    return out


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", text).strip("_")


def run_directory(cfg: RunConfig, dt: float) -> Path:
    name = f"{cfg.solver}_{_slug(cfg.tolerance.label())}_dt{dt / DAY:g}d"
    return output_root(cfg) / cfg.name / name


def execute(cfg: RunConfig) -> tuple[RunSummary, Path]:
    """Build the scenario, march it, and write per-run artifacts."""
    scenario = build_scenario(cfg.scenario, **cfg.override_dict())
    if cfg.dt is not None or cfg.t_max is not None:
        scenario = scenario.with_time_step(cfg.dt or scenario.schedule.dt, cfg.t_max)
    schedule = replace(scenario.schedule, max_retries=cfg.max_retries)
    out_dir = run_directory(cfg, schedule.dt)
    pending = sorted(cfg.snapshots)
    grid = scenario.model.grid
    if pending and pending[0] <= 0.0:
        emit_fields(scenario.initial, grid, 0.0, out_dir / "fields")
        pending = [t for t in pending if t > 0.0]

    def on_step(record, state):
        if cfg.histories:
            emit_convergence_history(
                record.report, record.index, out_dir / "histories" / f"step_{record.index:04d}.csv"
            )
        while pending and pending[0] <= record.time * (1 + 1e-12):
            pending.pop(0)
            emit_fields(state, grid, record.time, out_dir / "fields")

    logger.info("%s: %s, %s, dt=%g days", cfg.name, cfg.solver, cfg.tolerance.label(), schedule.dt / DAY)
    summary = run(
        scenario.model, scenario.initial, schedule, cfg.solver, cfg.tolerance,
        eps=cfg.eps, max_outer=cfg.max_outer, max_inner=cfg.max_inner, on_step=on_step,
    )
    emit_step_table(summary, out_dir / "steps.csv")
    status = "converged" if summary.converged else f"{DNC} {summary.failure}"
    logger.info("%s: %s after %d outer iterations", cfg.name, status, summary.outer_iterations)
    return summary, out_dir


def _execute_all(configs: list[RunConfig], jobs: int):
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(execute, configs))
    return [execute(c) for c in configs]


def _write_sweep_csv(path: Path, rows: list[tuple[RunConfig, RunSummary]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["solver", "strategy", "dt_days", "status", "outer", "per_step",
                     "pressure", "transport", "failed_outer", "max_cfl", "pvi"])
    for cfg, s in rows:
        writer.writerow([
            s.solver, s.strategy, fmt(s.dt / DAY), "ok" if s.converged else DNC,
            s.outer_iterations, fmt(s.iterations_per_step) if s.steps else "",
            s.pressure_iterations, s.transport_iterations, s.failed_outer_iterations,
            fmt(s.max_cfl), fmt(s.pvi),
        ])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())


def _run_configs(configs: list[RunConfig], jobs: int, sweep: bool) -> int:
    expanded = []
    for cfg in configs:
        runs = cfg.expand()
        if not sweep and len(runs) > 1:
            raise ConfigError(f"section [{cfg.name}] lists several solvers, tolerances or steps; use 'sweep'")
        expanded.extend(runs)
    results = _execute_all(expanded, jobs)
    any_dnc = False
    for cfg in configs:
        mine = [(c, r[0]) for c, r in zip(expanded, results) if c.name == cfg.name]
        by_dt: dict[float, list] = {}
        for c, s in mine:
            by_dt.setdefault(s.dt, []).append(s)
            any_dnc |= not s.converged
        for dt, summaries in sorted(by_dt.items()):
            stem = output_root(cfg) / cfg.name / f"iterations_dt{dt / DAY:g}d"
            text, _ = emit_iteration_table(summaries, stem)
            print(f"[{cfg.name}] dt = {dt / DAY:g} days")
            print(text)
        if sweep:
            _write_sweep_csv(output_root(cfg) / cfg.name / "sweep.csv", mine)
    return EXIT_DNC if any_dnc else EXIT_OK


def _list_scenarios() -> int:
    for name, builder in SCENARIOS.items():
        doc = (builder.__doc__ or "").strip().splitlines()
        print(f"{name:26s} {doc[0] if doc else ''}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fieldsplit", description="Two-phase flow nonlinear solver benchmarks")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run each config section once"),
                            ("sweep", "run every listed combination")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", type=Path)
        p.add_argument("-j", "--jobs", type=int, default=1, help="parallel worker processes")
    sub.add_parser("list-scenarios", help="print the built-in scenarios")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-scenarios":
        return _list_scenarios()
    try:
        text = args.config.read_text()
        configs = parse_config(text)
        return _run_configs(configs, max(1, args.jobs), sweep=args.command == "sweep")
    except ConfigError as exc:
        print(f"error: {args.config}: {exc}", file=sys.stderr)
    except (ConfigurationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
