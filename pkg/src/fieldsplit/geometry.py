"""Structured 2D grids and two-point flux transmissibilities.

Cells are numbered row-major, ``index = row * nx + col``.  For a vertical
(x-z) grid the row index runs downward; for a horizontal (x-y) grid the
row index runs along y.  All quantities are SI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MILLIDARCY = 9.869233e-16  # m^2
DAY = 86400.0  # s
GRAVITY = 9.81  # m/s^2


class ConfigurationError(ValueError):
    """Raised when a grid, rock, fluid or scenario definition is invalid."""


@dataclass(frozen=True)
class Grid:
    nx: int
    nz: int
    dx: float
    dz: float
    thickness: float
    orientation: str
    tilt_deg: float
    cell_volume: np.ndarray = field(repr=False)
    depth: np.ndarray = field(repr=False)
    iface_k: np.ndarray = field(repr=False)
    iface_l: np.ndarray = field(repr=False)
    half_trans_k: np.ndarray = field(repr=False)
    half_trans_l: np.ndarray = field(repr=False)

    @property
    def num_cells(self) -> int:
        return self.nx * self.nz

    @property
    def num_interfaces(self) -> int:
        return self.iface_k.size

    @property
    def interfaces(self) -> list[tuple[int, int]]:
        return list(zip(self.iface_k.tolist(), self.iface_l.tolist()))

    def cell_index(self, col: int, row: int) -> int:
        return row * self.nx + col

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (x, second-axis) coordinates of cell centers, row-major."""
        cols, rows = np.meshgrid(np.arange(self.nx), np.arange(self.nz))
        return ((cols.ravel() + 0.5) * self.dx, (rows.ravel() + 0.5) * self.dz)


@dataclass(frozen=True)
class RockProps:
    porosity: np.ndarray
    permeability: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.porosity, dtype=float)
        k = np.asarray(self.permeability, dtype=float)
        if phi.shape != k.shape:
            raise ConfigurationError("porosity and permeability sizes differ")
        if np.any(phi <= 0.0) or np.any(phi > 1.0):
            raise ConfigurationError("porosity must lie in (0, 1]")
        if np.any(k <= 0.0) or not np.all(np.isfinite(k)):
            raise ConfigurationError("permeability must be strictly positive")
        object.__setattr__(self, "porosity", phi)
        object.__setattr__(self, "permeability", k)

    @classmethod
    def uniform(cls, n: int, porosity: float, permeability: float) -> "RockProps":
        return cls(np.full(n, float(porosity)), np.full(n, float(permeability)))


def build_cartesian_grid(
    nx: int,
    nz: int,
    dx: float,
    dz: float,
    orientation: str = "vertical",
    tilt_deg: float = 0.0,
    thickness: float | None = None,
) -> Grid:
    """Build a structured grid with no-flow outer boundaries.

    ``orientation="vertical"`` gives an x-z cross-section whose depth is the
    cell-center z coordinate (rotated by ``tilt_deg`` about the y axis).
    ``orientation="horizontal"`` gives an x-y layer tilted by ``tilt_deg``
    along y, so that depth = y * sin(tilt).

    Out-of-plane thickness defaults to ``dz`` for vertical grids and to 1 m
    for horizontal ones.
    """
    if int(nx) != nx or int(nz) != nz or nx < 1 or nz < 1:
        raise ConfigurationError(f"cell counts must be positive integers, got {nx}x{nz}")
    if not (dx > 0 and dz > 0):
        raise ConfigurationError("cell dimensions must be positive")
    if not 0.0 <= tilt_deg <= 90.0:
        raise ConfigurationError("tilt must lie in [0, 90] degrees")
    if orientation not in ("vertical", "horizontal"):
        raise ConfigurationError(f"unknown orientation {orientation!r}")
    nx, nz = int(nx), int(nz)
    if thickness is None:
        thickness = dz if orientation == "vertical" else 1.0
    if thickness <= 0:
        raise ConfigurationError("thickness must be positive")

    m = nx * nz
    idx = np.arange(m).reshape(nz, nx)
    x_k = idx[:, :-1].ravel()
    z_k = idx[:-1, :].ravel()
    iface_k = np.concatenate([x_k, z_k])
    iface_l = np.concatenate([x_k + 1, z_k + nx])
    order = np.lexsort((iface_l, iface_k))
    iface_k, iface_l = iface_k[order], iface_l[order]

    ht_x = dz * thickness / (0.5 * dx)
    ht_z = dx * thickness / (0.5 * dz)
    is_x = (iface_l - iface_k) == 1
    half = np.where(is_x, ht_x, ht_z)

    cols, rows = np.meshgrid(np.arange(nx), np.arange(nz))
    xc = (cols.ravel() + 0.5) * dx
    zc = (rows.ravel() + 0.5) * dz
    angle = math.radians(tilt_deg)
    if orientation == "vertical":
        depth = zc * math.cos(angle) + xc * math.sin(angle)
    else:
        depth = zc * math.sin(angle)

    return Grid(
        nx=nx,
        nz=nz,
        dx=float(dx),
        dz=float(dz),
        thickness=float(thickness),
        orientation=orientation,
        tilt_deg=float(tilt_deg),
        cell_volume=np.full(m, dx * dz * thickness),
        depth=depth,
        iface_k=iface_k,
        iface_l=iface_l,
        half_trans_k=half.copy(),
        half_trans_l=half.copy(),
    )


def tpfa_transmissibility(grid: Grid, rock: RockProps) -> np.ndarray:
    """Harmonic two-point transmissibility per interface, in m^3."""
    k = np.asarray(rock.permeability, dtype=float)
    if k.size != grid.num_cells:
        raise ConfigurationError(
            f"rock has {k.size} cells but grid has {grid.num_cells}"
        )
    if np.any(k <= 0.0):
        raise ConfigurationError("zero or negative permeability")
    tk = k[grid.iface_k] * grid.half_trans_k
    tl = k[grid.iface_l] * grid.half_trans_l
    return tk * tl / (tk + tl)


def load_grid_file(path: str | Path) -> np.ndarray:
    """Read a property field: header ``nx nz`` then row-major values.

    Returns an array of shape (nz, nx).
    """
    text = Path(path).read_text().split()
    if len(text) < 2:
        raise ConfigurationError(f"{path}: missing 'nx nz' header")
    nx, nz = int(text[0]), int(text[1])
    values = np.array([float(v) for v in text[2:]])
    if values.size != nx * nz:
        raise ConfigurationError(
            f"{path}: expected {nx * nz} values, found {values.size}"
        )
    return values.reshape(nz, nx)


def save_grid_file(path: str | Path, values: np.ndarray) -> None:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    nz, nx = values.shape
    lines = [f"{nx} {nz}"]
    lines += [" ".join(f"{v:.17e}" for v in row) for row in values]
    Path(path).write_text("\n".join(lines) + "\n")
