"""Finite-volume residuals and analytic Jacobians for incompressible two-phase flow.

Phase residual in cell K (mass per time)::

    r_l,K = V_K phi_K rho_l (s_l,K - s_l,K^n) / dt + sum_L F_l,KL - V_K q_l,K

``F_l,KL`` is the mass flux leaving K through interface (K, L).  Two
upwinding schemes are available:

* PPU: each phase takes its mobility from the cell upstream of its own
  potential difference.
* IHU: the flux is split into a viscous part carried by the total velocity
  (both mobilities from the cell upstream of u_T) and a buoyancy part with
  fixed density-ordered upwinding (heavy phase from the upper cell, light
  phase from the lower cell).

The split form uses the pressure residual ``g = r_nw + r_w`` and the
transport residual ``h = r_w``.  Derivatives ignore the switching of
upwind cells.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .constitutive import FluidProps, MobilityEval, mobilities
from .geometry import GRAVITY, ConfigurationError, Grid, RockProps, tpfa_transmissibility
from .linalg import BlockSystem


class FluxScheme(str, enum.Enum):
    PPU = "ppu"
    IHU = "ihu"


class TransportVariant(str, enum.Enum):
    FIXED_PRESSURE = "fixed_pressure"  # PPU flux at a fixed pressure field
    FIXED_UT = "fixed_ut"  # IHU flux with a frozen interface total velocity


@dataclass(frozen=True)
class State:
    p: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        object.__setattr__(self, "s", np.asarray(self.s, dtype=float))

    def copy(self) -> "State":
        return State(self.p.copy(), self.s.copy())

    def with_p(self, p) -> "State":
        return State(p, self.s)

    def with_s(self, s) -> "State":
        return State(self.p, s)


@dataclass(frozen=True)
class WellSet:
    """Rate-controlled wells; rates are volumetric (m^3/s) and non-negative.

    Injectors inject the wetting phase.  Producers withdraw a fixed total
    volumetric rate split by the in-cell fractional flow.
    """

    injectors: tuple = ()
    producers: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "injectors", tuple((int(c), float(q)) for c, q in self.injectors))
        object.__setattr__(self, "producers", tuple((int(c), float(q)) for c, q in self.producers))
        for _, q in self.injectors + self.producers:
            if q < 0:
                raise ConfigurationError("well rates must be non-negative")

    def validate(self, num_cells: int) -> None:
        for c, _ in self.injectors + self.producers:
            if not 0 <= c < num_cells:
                raise ConfigurationError(f"well perforates invalid cell {c}")

    @property
    def injection_rate(self) -> float:
        return sum(q for _, q in self.injectors)

    @property
    def production_rate(self) -> float:
        return sum(q for _, q in self.producers)


@dataclass
class PhaseFlux:
    """Per-interface mass flux and its derivatives w.r.t. (p_K, p_L, s_K, s_L)."""

    F: np.ndarray
    dpk: np.ndarray
    dpl: np.ndarray
    dsk: np.ndarray
    dsl: np.ndarray


@dataclass
class InterfaceFlux:
    water: PhaseFlux
    oil: PhaseFlux


@dataclass
class AssembledSystem:
    """Residual rows and named sparse Jacobian blocks.

    ``kind`` is ``"coupled"`` (rows ``[r_nw; r_w]``, blocks ``nw_p, nw_s,
    w_p, w_s``), ``"pressure"`` (rows ``g``, blocks ``g_p, g_s``) or
    ``"transport"`` (rows ``h``, blocks ``h_s, h_p``).
    """

    kind: str
    residual: np.ndarray
    blocks: dict = field(default_factory=dict)
    r_nw: np.ndarray | None = None
    r_w: np.ndarray | None = None

    @property
    def g(self) -> np.ndarray:
        if self.kind == "pressure":
            return self.residual
        return self.r_nw + self.r_w

    @property
    def h(self) -> np.ndarray:
        if self.kind == "transport":
            return self.residual
        return self.r_w

    def matrix(self) -> sp.csr_matrix:
        b = self.blocks
        return sp.bmat([[b["nw_p"], b["nw_s"]], [b["w_p"], b["w_s"]]], format="csr")

    def field_split_blocks(self) -> BlockSystem:
        """Blocks of the Jacobian of ``[g; h]`` (coupled assemblies only)."""
        b = self.blocks
        return BlockSystem(
            App=b["nw_p"] + b["w_p"],
            Aps=b["nw_s"] + b["w_s"],
            Asp=b["w_p"],
            Ass=b["w_s"],
            rhs_p=self.g,
            rhs_s=self.h,
        )


class FlowModel:
    """Static problem data plus residual/Jacobian assembly.

    The pressure level of an incompressible problem with no-flow
    boundaries is fixed by an anchor term ``c * (p_a - p_ref)`` added to
    the non-wetting residual of one cell.  At any solution of the original
    equations the anchor flux is zero, because the volume-weighted sum of
    all residual rows vanishes identically.
    """

    def __init__(
        self,
        grid: Grid,
        rock: RockProps,
        fluid: FluidProps,
        wells: WellSet | None = None,
        gravity: float = GRAVITY,
        p_ref: float = 0.0,
        anchor_cell: int = 0,
    ):
        self.grid = grid
        self.rock = rock
        self.fluid = fluid
        self.wells = wells if wells is not None else WellSet()
        self.wells.validate(grid.num_cells)
        self.gravity = float(gravity)
        self.trans = tpfa_transmissibility(grid, rock)
        self.pore_volume = grid.cell_volume * rock.porosity
        self.ik = grid.iface_k
        self.il = grid.iface_l
        self.ddepth = grid.depth[self.ik] - grid.depth[self.il]
        self.anchor_cell = int(anchor_cell)
        self.p_ref = float(p_ref)
        tmed = float(np.median(self.trans)) if self.trans.size else 1e-12
        self.anchor_coeff = fluid.rho_nw * tmed * (1.0 / fluid.mu_w + 1.0 / fluid.mu_nw)
        self._build_pattern()

    # ------------------------------------------------------------------ setup
    @property
    def num_cells(self) -> int:
        return self.grid.num_cells

    @property
    def m_w(self) -> np.ndarray:
        return self.fluid.rho_w * self.pore_volume

    @property
    def m_nw(self) -> np.ndarray:
        return self.fluid.rho_nw * self.pore_volume

    def _build_pattern(self):
        m = self.num_cells
        diag = np.arange(m)
        rows = np.concatenate([diag, self.ik, self.il])
        cols = np.concatenate([diag, self.il, self.ik])
        order = np.lexsort((cols, rows))
        slot = np.empty(rows.size, dtype=np.int64)
        slot[order] = np.arange(rows.size)
        self._indices = cols[order].astype(np.int32)
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=m))]).astype(np.int32)
        n_if = self.ik.size
        self._slot_diag = slot[:m]
        self._slot_kl = slot[m : m + n_if]
        self._slot_lk = slot[m + n_if :]
        self._scatter_index = np.concatenate(
            [self._slot_diag[self.ik], self._slot_diag[self.il], self._slot_kl, self._slot_lk, self._slot_diag]
        )
        self._nnz = rows.size

    def _block(self, d_k, d_l, diag) -> sp.csr_matrix:
        """Jacobian block of ``r_K += F, r_L -= F`` plus a diagonal term."""
        weights = np.concatenate([d_k, -d_l, d_l, -d_k, diag])
        data = np.bincount(self._scatter_index, weights=weights, minlength=self._nnz)
        m = self.num_cells
        return sp.csr_matrix((data, self._indices, self._indptr), shape=(m, m))

    def _divergence(self, F) -> np.ndarray:
        m = self.num_cells
        return np.bincount(self.ik, weights=F, minlength=m) - np.bincount(self.il, weights=F, minlength=m)

    # ----------------------------------------------------------------- fluxes
    def ppu_fluxes(self, state: State, mob: MobilityEval | None = None) -> InterfaceFlux:
        """Phase-potential upwinded mass fluxes for all interfaces."""
        if mob is None:
            mob = mobilities(state.s, self.fluid)
        p, k, l = state.p, self.ik, self.il
        dp = p[k] - p[l]
        out = []
        for rho, lam, dlam in (
            (self.fluid.rho_w, mob.lambda_w, mob.dlambda_w_ds),
            (self.fluid.rho_nw, mob.lambda_nw, mob.dlambda_nw_ds),
        ):
            dphi = dp - rho * self.gravity * self.ddepth
            up_k = dphi >= 0.0
            lam_up = np.where(up_k, lam[k], lam[l])
            coeff = self.trans * rho
            dpk = coeff * lam_up
            out.append(
                PhaseFlux(
                    F=dpk * dphi,
                    dpk=dpk,
                    dpl=-dpk,
                    dsk=np.where(up_k, coeff * dlam[k] * dphi, 0.0),
                    dsl=np.where(up_k, 0.0, coeff * dlam[l] * dphi),
                )
            )
        return InterfaceFlux(water=out[0], oil=out[1])

    def total_velocity(self, state: State, mob: MobilityEval | None = None) -> PhaseFlux:
        """Volumetric total flux u_T (m^3/s) with PPU per-phase upwinding."""
        f = self.ppu_fluxes(state, mob)
        rw, rn = self.fluid.rho_w, self.fluid.rho_nw
        return PhaseFlux(
            *(getattr(f.water, a) / rw + getattr(f.oil, a) / rn for a in ("F", "dpk", "dpl", "dsk", "dsl"))
        )

    def ihu_fluxes(self, state: State, u_t: np.ndarray | None = None, mob: MobilityEval | None = None) -> InterfaceFlux:
        """Hybrid-upwinded mass fluxes.

        With ``u_t=None`` the total velocity is evaluated from ``state`` and
        differentiated; otherwise the given per-interface total velocity is
        held fixed (zero pressure derivatives).
        """
        if mob is None:
            mob = mobilities(state.s, self.fluid)
        k, l = self.ik, self.il
        n_if = k.size
        if u_t is None:
            ut = self.total_velocity(state, mob)
        else:
            u = np.asarray(u_t, dtype=float)
            if u.shape != (n_if,):
                raise ConfigurationError("frozen total velocity has wrong size")
            z = np.zeros(n_if)
            ut = PhaseFlux(u, z, z, z, z)
        lw, ln, dlw, dln = mob.lambda_w, mob.lambda_nw, mob.dlambda_w_ds, mob.dlambda_nw_ds

        # viscous part: both mobilities upstream of u_T
        up_v = ut.F >= 0.0
        lwv = np.where(up_v, lw[k], lw[l])
        lnv = np.where(up_v, ln[k], ln[l])
        dlwv = np.where(up_v, dlw[k], dlw[l])
        dlnv = np.where(up_v, dln[k], dln[l])
        ltv = lwv + lnv
        fw = lwv / ltv
        dfw = (dlwv * lnv - lwv * dlnv) / (ltv * ltv)
        dfw_k = np.where(up_v, dfw, 0.0)
        dfw_l = np.where(up_v, 0.0, dfw)

        # buoyancy part: heavy phase from the upper cell, light from the lower
        upper_is_k = self.ddepth < 0.0
        w_from_k = upper_is_k if self.fluid.rho_w >= self.fluid.rho_nw else ~upper_is_k
        a = np.where(w_from_k, lw[k], lw[l])
        da_k = np.where(w_from_k, dlw[k], 0.0)
        da_l = np.where(w_from_k, 0.0, dlw[l])
        b = np.where(w_from_k, ln[l], ln[k])
        db_k = np.where(w_from_k, 0.0, dln[k])
        db_l = np.where(w_from_k, dln[l], 0.0)
        den = a + b
        pos = den > 0.0
        safe = np.where(pos, den, 1.0)
        hm = np.where(pos, a * b / safe, 0.0)
        dh_da = np.where(pos, (b / safe) ** 2, 0.0)
        dh_db = np.where(pos, (a / safe) ** 2, 0.0)
        cg = self.trans * (self.fluid.rho_nw - self.fluid.rho_w) * self.gravity * self.ddepth
        G = cg * hm
        dG_k = cg * (dh_da * da_k + dh_db * db_k)
        dG_l = cg * (dh_da * da_l + dh_db * db_l)

        rw, rn = self.fluid.rho_w, self.fluid.rho_nw
        u = ut.F
        water = PhaseFlux(
            F=rw * (fw * u + G),
            dpk=rw * fw * ut.dpk,
            dpl=rw * fw * ut.dpl,
            dsk=rw * (dfw_k * u + fw * ut.dsk + dG_k),
            dsl=rw * (dfw_l * u + fw * ut.dsl + dG_l),
        )
        fo = 1.0 - fw
        oil = PhaseFlux(
            F=rn * (fo * u - G),
            dpk=rn * fo * ut.dpk,
            dpl=rn * fo * ut.dpl,
            dsk=rn * (-dfw_k * u + fo * ut.dsk - dG_k),
            dsl=rn * (-dfw_l * u + fo * ut.dsl - dG_l),
        )
        return InterfaceFlux(water=water, oil=oil)

    def fluxes(self, state: State, scheme: FluxScheme) -> InterfaceFlux:
        if FluxScheme(scheme) is FluxScheme.PPU:
            return self.ppu_fluxes(state)
        return self.ihu_fluxes(state)

    # ------------------------------------------------------------------ wells
    def well_terms(self, s: np.ndarray, mob: MobilityEval | None = None):
        """Residual contributions ``-V q_l`` and their saturation derivatives.

        Returns ``(rw, rnw, drw_ds, drnw_ds)`` as per-cell arrays (kg/s).
        """
        m = self.num_cells
        rw, rn = np.zeros(m), np.zeros(m)
        drw, drn = np.zeros(m), np.zeros(m)
        for c, q in self.wells.injectors:
            rw[c] -= self.fluid.rho_w * q
        if self.wells.producers:
            if mob is None:
                mob = mobilities(s, self.fluid)
            for c, q in self.wells.producers:
                lw, ln = mob.lambda_w[c], mob.lambda_nw[c]
                lt = lw + ln
                fw = lw / lt
                dfw = (mob.dlambda_w_ds[c] * ln - lw * mob.dlambda_nw_ds[c]) / (lt * lt)
                rw[c] += self.fluid.rho_w * q * fw
                rn[c] += self.fluid.rho_nw * q * (1.0 - fw)
                drw[c] += self.fluid.rho_w * q * dfw
                drn[c] -= self.fluid.rho_nw * q * dfw
        return rw, rn, drw, drn

    # --------------------------------------------------------------- assembly
    def _phase_residuals(self, state, prev, dt, flux: InterfaceFlux, mob):
        if not dt > 0:
            raise ConfigurationError("time step must be positive")
        acc = self.pore_volume / dt
        ds = state.s - prev.s
        wr, wn, dwr, dwn = self.well_terms(state.s, mob)
        r_w = self.fluid.rho_w * acc * ds + self._divergence(flux.water.F) + wr
        r_nw = -self.fluid.rho_nw * acc * ds + self._divergence(flux.oil.F) + wn
        a = self.anchor_cell
        r_nw[a] += self.anchor_coeff * (state.p[a] - self.p_ref)
        diag_w_s = self.fluid.rho_w * acc + dwr
        diag_nw_s = -self.fluid.rho_nw * acc + dwn
        diag_nw_p = np.zeros(self.num_cells)
        diag_nw_p[a] = self.anchor_coeff
        return r_w, r_nw, diag_w_s, diag_nw_s, diag_nw_p

    def assemble_coupled(self, state: State, prev: State, dt: float, scheme: FluxScheme) -> AssembledSystem:
        mob = mobilities(state.s, self.fluid)
        flux = self.ppu_fluxes(state, mob) if FluxScheme(scheme) is FluxScheme.PPU else self.ihu_fluxes(state, mob=mob)
        r_w, r_nw, dws, dns, dnp = self._phase_residuals(state, prev, dt, flux, mob)
        zero = np.zeros(self.num_cells)
        w, o = flux.water, flux.oil
        blocks = {
            "nw_p": self._block(o.dpk, o.dpl, dnp),
            "nw_s": self._block(o.dsk, o.dsl, dns),
            "w_p": self._block(w.dpk, w.dpl, zero),
            "w_s": self._block(w.dsk, w.dsl, dws),
        }
        return AssembledSystem("coupled", np.concatenate([r_nw, r_w]), blocks, r_nw=r_nw, r_w=r_w)

    def assemble_pressure(self, state: State, prev: State, dt: float, scheme: FluxScheme, with_ds: bool = True) -> AssembledSystem:
        mob = mobilities(state.s, self.fluid)
        flux = self.ppu_fluxes(state, mob) if FluxScheme(scheme) is FluxScheme.PPU else self.ihu_fluxes(state, mob=mob)
        r_w, r_nw, dws, dns, dnp = self._phase_residuals(state, prev, dt, flux, mob)
        w, o = flux.water, flux.oil
        blocks = {"g_p": self._block(w.dpk + o.dpk, w.dpl + o.dpl, dnp)}
        if with_ds:
            blocks["g_s"] = self._block(w.dsk + o.dsk, w.dsl + o.dsl, dws + dns)
        return AssembledSystem("pressure", r_nw + r_w, blocks, r_nw=r_nw, r_w=r_w)

    def assemble_transport(
        self,
        state: State,
        prev: State,
        dt: float,
        variant: TransportVariant,
        u_t: np.ndarray | None = None,
        with_dp: bool = False,
    ) -> AssembledSystem:
        """Transport residual ``h = r_w`` at fixed pressure or frozen u_T."""
        variant = TransportVariant(variant)
        mob = mobilities(state.s, self.fluid)
        if variant is TransportVariant.FIXED_UT:
            if u_t is None:
                raise ConfigurationError("fixed-u_T transport needs a frozen total velocity")
            flux = self.ihu_fluxes(state, u_t=u_t, mob=mob)
        else:
            flux = self.ppu_fluxes(state, mob)
        if not dt > 0:
            raise ConfigurationError("time step must be positive")
        acc = self.pore_volume / dt
        wr, _, dwr, _ = self.well_terms(state.s, mob)
        w = flux.water
        h = self.fluid.rho_w * acc * (state.s - prev.s) + self._divergence(w.F) + wr
        blocks = {"h_s": self._block(w.dsk, w.dsl, self.fluid.rho_w * acc + dwr)}
        if with_dp:
            blocks["h_p"] = self._block(w.dpk, w.dpl, np.zeros(self.num_cells))
        return AssembledSystem("transport", h, blocks, r_w=h)

    # ------------------------------------------------------------ diagnostics
    def well_source(self, cell: int, state: State):
        """Per-volume source ``(q_w, q_nw)`` in kg/(m^3 s) and d/ds of each."""
        rw, rn, drw, drn = self.well_terms(state.s)
        v = self.grid.cell_volume[cell]
        return -rw[cell] / v, -rn[cell] / v, -drw[cell] / v, -drn[cell] / v


# Module-level wrappers mirroring the operation names used elsewhere.

def ppu_phase_flux(model: FlowModel, state: State) -> InterfaceFlux:
    return model.ppu_fluxes(state)


def total_velocity_flux(model: FlowModel, state: State) -> PhaseFlux:
    return model.total_velocity(state)


def ihu_phase_flux(model: FlowModel, state: State, u_t=None) -> InterfaceFlux:
    return model.ihu_fluxes(state, u_t=u_t)


def assemble_coupled(model, state, prev_state, dt, scheme=FluxScheme.PPU):
    return model.assemble_coupled(state, prev_state, dt, scheme)


def assemble_pressure(model, state, prev_state, dt, scheme=FluxScheme.PPU):
    return model.assemble_pressure(state, prev_state, dt, scheme)


def assemble_transport(model, state, prev_state, dt, variant, u_t=None, with_dp=False):
    return model.assemble_transport(state, prev_state, dt, variant, u_t=u_t, with_dp=with_dp)


def well_source(model: FlowModel, cell: int, state: State):
    return model.well_source(cell, state)
