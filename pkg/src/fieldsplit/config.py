"""Line-oriented run configuration.

Syntax::

    # comment
    scenario = gravity_segregation      # keys before any section are defaults
    [fast]
    solver = fsmsn_ut, newton
    tolerance = fixed 1e-6, a1
    dt = 10 day, 25 day
    scenario.n = 50                     # builder override

List-valued keys take comma-separated values.  Times accept the units
s, min, h, day and year; a bare number is seconds.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from .geometry import DAY
from .nonlinear import DEFAULT_OUTER_TOL, MAX_INNER, MAX_OUTER, SOLVER_NAMES, ToleranceStrategy
from .scenarios import SCENARIOS

TIME_UNITS = {
    "s": 1.0, "sec": 1.0, "second": 1.0, "seconds": 1.0,
    "min": 60.0, "minute": 60.0, "minutes": 60.0,
    "h": 3600.0, "hour": 3600.0, "hours": 3600.0,
    "d": DAY, "day": DAY, "days": DAY,
    "y": 365.0 * DAY, "year": 365.0 * DAY, "years": 365.0 * DAY,
}

_SECTION = re.compile(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]$")
_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class RunConfig:
    name: str = "run"
    scenario: str = "gravity_segregation"
    overrides: tuple = ()  # sorted (key, value) pairs passed to the builder
    solvers: tuple = ("newton",)
    tolerances: tuple = (ToleranceStrategy(),)
    eps: float = DEFAULT_OUTER_TOL
    dts: tuple = ()  # empty: the scenario's own step
    t_max: float | None = None
    output: str = "output"
    snapshots: tuple = ()
    max_retries: int = 4
    max_outer: int = MAX_OUTER
    max_inner: int = MAX_INNER
    histories: bool = True

    @property
    def solver(self) -> str:
        return self.solvers[0]

    @property
    def tolerance(self) -> ToleranceStrategy:
        return self.tolerances[0]

    @property
    def dt(self) -> float | None:
        return self.dts[0] if self.dts else None

    def override_dict(self) -> dict:
        return dict(self.overrides)

    def expand(self) -> list["RunConfig"]:
        """One single-valued config per (dt, solver, tolerance) combination."""
        out = []
        for dt in self.dts or (None,):
            for solver in self.solvers:
                for tol in self.tolerances:
                    out.append(replace(
                        self, solvers=(solver,), tolerances=(tol,), dts=() if dt is None else (dt,)
                    ))
        return out


def parse_time(text: str) -> float:
    parts = text.strip().split()
    if len(parts) == 1 and _NUMBER.match(parts[0]):
        return float(parts[0])
    if len(parts) == 2 and _NUMBER.match(parts[0]) and parts[1].lower() in TIME_UNITS:
        return float(parts[0]) * TIME_UNITS[parts[1].lower()]
    raise ValueError(f"invalid time {text.strip()!r}; expected '<number> [s|min|h|day|year]'")


def _parse_scalar(text: str):
    text = text.strip()
    if re.fullmatch(r"[+-]?\d+", text):
        return int(text)
    if _NUMBER.match(text):
        return float(text)
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    return text


def _split_list(value: str) -> list[str]:
    items = [v.strip() for v in value.split(",")]
    if not all(items):
        raise ValueError("empty list entry")
    return items


def _positive_time(v: str) -> float:
    t = parse_time(v)
    if not t > 0:
        raise ValueError("time must be positive")
    return t


def _apply_key(cfg: dict, key: str, value: str) -> None:
    if key.startswith("scenario."):
        sub = key.split(".", 1)[1]
        if not sub.isidentifier():
            raise ValueError(f"invalid override name {sub!r}")
        cfg.setdefault("overrides", {})[sub] = _parse_scalar(value)
        return
    if key == "scenario":
        if value not in SCENARIOS:
            raise ValueError(f"unknown scenario {value!r}; available: {', '.join(sorted(SCENARIOS))}")
        cfg["scenario"] = value
    elif key == "solver":
        names = _split_list(value)
        for n in names:
            if n not in SOLVER_NAMES:
                raise ValueError(f"unknown solver {n!r}; expected one of {', '.join(SOLVER_NAMES)}")
        cfg["solvers"] = tuple(names)
    elif key == "tolerance":
        cfg["tolerances"] = tuple(ToleranceStrategy.parse(v) for v in _split_list(value))
    elif key == "eps":
        eps = float(value)
        if not eps > 0:
            raise ValueError("eps must be positive")
        cfg["eps"] = eps
    elif key == "dt":
        cfg["dts"] = tuple(_positive_time(v) for v in _split_list(value)) if value else ()
    elif key == "t_max":
        cfg["t_max"] = _positive_time(value)
    elif key == "output":
        cfg["output"] = value
    elif key == "snapshots":
        cfg["snapshots"] = tuple(parse_time(v) for v in _split_list(value)) if value else ()
    elif key in ("max_retries", "max_outer", "max_inner"):
        n = int(value)
        if n < 0:
            raise ValueError(f"{key} must be non-negative")
        cfg[key] = n
    elif key == "histories":
        flag = _parse_scalar(value)
        if not isinstance(flag, bool):
            raise ValueError("histories must be true or false")
        cfg["histories"] = flag
    else:
        raise ValueError(f"unknown key {key!r}")


def _build(name: str, values: dict) -> RunConfig:
    values = dict(values)
    values["overrides"] = tuple(sorted(values.get("overrides", {}).items()))
    return RunConfig(name=name, **values)


def parse_config(text: str) -> list[RunConfig]:
    """Parse configuration text into one :class:`RunConfig` per section.

    A file without section headers yields a single config named ``run``.
    Errors carry the offending line number.
    """
    defaults: dict = {}
    sections: list[tuple[str, dict, int]] = []
    current = defaults
    seen_scenario = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            name = m.group(1)
            if any(s[0] == name for s in sections):
                raise ConfigError(f"duplicate section [{name}]", lineno)
            current = {}
            sections.append((name, current, lineno))
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("missing key", lineno)
        try:
            _apply_key(current, key, value)
        except ValueError as exc:
            raise ConfigError(str(exc), lineno) from None
        if key == "scenario":
            seen_scenario[id(current)] = True
    if not sections:
        sections = [("run", {}, 1)]
    configs = []
    for name, values, lineno in sections:
        if not (seen_scenario.get(id(values)) or seen_scenario.get(id(defaults))):
            raise ConfigError(f"section [{name}] has no scenario", lineno)
        merged = {**defaults, **values}
        merged["overrides"] = {**defaults.get("overrides", {}), **values.get("overrides", {})}
        configs.append(_build(name, merged))
    return configs


def _fmt_time(t: float) -> str:
    days = t / DAY
    if days * DAY == t:
        return f"{days!r} day"
    return f"{t!r} s"


def format_config(configs: list[RunConfig]) -> str:
    """Render configs so that :func:`parse_config` gives them back unchanged."""
    blocks = []
    for cfg in configs:
        lines = [f"[{cfg.name}]", f"scenario = {cfg.scenario}"]
        lines.append("solver = " + ", ".join(cfg.solvers))
        lines.append("tolerance = " + ", ".join(
            f"fixed {t.value!r}" if t.kind == "fixed" else t.kind for t in cfg.tolerances
        ))
        lines.append(f"eps = {cfg.eps!r}")
        lines.append("dt = " + ", ".join(_fmt_time(t) for t in cfg.dts))
        if cfg.t_max is not None:
            lines.append(f"t_max = {_fmt_time(cfg.t_max)}")
        lines.append(f"output = {cfg.output}")
        lines.append("snapshots = " + ", ".join(_fmt_time(t) for t in cfg.snapshots))
        for key in ("max_retries", "max_outer", "max_inner"):
            lines.append(f"{key} = {getattr(cfg, key)}")
        lines.append(f"histories = {str(cfg.histories).lower()}")
        for key, value in cfg.overrides:
            lines.append(f"scenario.{key} = {value!r}" if not isinstance(value, str) else f"scenario.{key} = {value}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
