"""Fluid properties, quadratic Corey relative permeabilities and mobilities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ConfigurationError


@dataclass(frozen=True)
class FluidProps:
    """Incompressible two-phase fluid: densities in kg/m^3, viscosities in Pa.s."""

    rho_w: float = 1025.0
    rho_nw: float = 849.0
    mu_w: float = 3.0e-4
    mu_nw: float = 3.0e-3

    def __post_init__(self):
        for name in ("rho_w", "rho_nw", "mu_w", "mu_nw"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class MobilityEval:
    lambda_w: np.ndarray
    lambda_nw: np.ndarray
    dlambda_w_ds: np.ndarray
    dlambda_nw_ds: np.ndarray

    @property
    def lambda_t(self) -> np.ndarray:
        return self.lambda_w + self.lambda_nw


def corey_relperm(s):
    """Quadratic relative permeabilities ``(krw, krnw, dkrw/ds, dkrnw/ds)``.

    Saturations outside [0, 1] are clamped; the derivative is the one-sided
    value at the clamp, so it vanishes outside the interval.
    """
    s = np.asarray(s, dtype=float)
    sc = np.clip(s, 0.0, 1.0)
    inside = (s >= 0.0) & (s <= 1.0)
    krw = sc * sc
    krnw = (1.0 - sc) ** 2
    dkrw = np.where(inside, 2.0 * sc, 0.0)
    dkrnw = np.where(inside, -2.0 * (1.0 - sc), 0.0)
    return krw, krnw, dkrw, dkrnw


def mobilities(s, fluid: FluidProps) -> MobilityEval:
    krw, krnw, dkrw, dkrnw = corey_relperm(s)
    return MobilityEval(
        lambda_w=krw / fluid.mu_w,
        lambda_nw=krnw / fluid.mu_nw,
        dlambda_w_ds=dkrw / fluid.mu_w,
        dlambda_nw_ds=dkrnw / fluid.mu_nw,
    )
