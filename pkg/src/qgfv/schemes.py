"""Time-stepping schemes for the barotropic PV equation.

Four schemes share one diagnostic pipeline (streamfunction inversion,
vertex remap, skew-gradient velocity, edge PV averaging):

* ivfv1 - inviscid, PV prognostic on all cells, RK4.
* ivfv2 - inviscid, PV prognostic on interior cells only; wall PV is reset
  from the post-step streamfunction after every completed RK4 step.
* vsfv1 - viscous, streamfunction prognostic, semi-implicit Euler with
  drag and lateral viscosity treated implicitly in a bordered solve.
* vsfv2 - viscous, PV prognostic on interior cells, RK4, vorticity taken
  from the streamfunction Laplacian everywhere so the no-slip wall enters
  through the wall PV update at every diagnosis.

Velocity is discretely divergence-free on every cell in every scheme, so
the flux-form transport conserves total PV and, semi-discretely, the
potential enstrophy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np

from .errors import SolverError
from .elliptic import (PhysicalParams, assemble_semi_implicit_system,
                       linear_solve, solve_constrained_streamfunction)
from .operators import (flux_divergence, matrices, remap_cell_to_edge,
                        remap_cell_to_vertex, skew_gradient)

logger = logging.getLogger(__name__)


class Diagnostics(NamedTuple):
    """Fields derived from the prognostic variable at one time level."""

    psi: np.ndarray        # cell streamfunction
    l: float               # common wall value of psi
    psi_tilde: np.ndarray  # vertex streamfunction (kite remap)
    u: np.ndarray          # edge normal velocity
    zeta: np.ndarray       # cell relative vorticity
    q_hat: np.ndarray      # edge PV average


@dataclass(frozen=True)
class SchemeState:
    """Prognostic field plus its consistent diagnostics at one time."""

    time: float
    prognostic: np.ndarray
    diagnostics: Diagnostics


@dataclass(frozen=True)
class Forcing:
    """Per-cell wind forcing, stored as curl(tau)/H (units 1/s^2)."""

    wind_curl: np.ndarray

    def __post_init__(self):
        wc = np.ascontiguousarray(self.wind_curl, dtype=np.float64)
        if wc.ndim != 1 or not np.all(np.isfinite(wc)):
            raise ValueError("wind_curl must be a finite 1-d cell field")
        wc.setflags(write=False)
        object.__setattr__(self, "wind_curl", wc)

    @classmethod
    def none(cls, mesh) -> "Forcing":
        return cls(wind_curl=np.zeros(mesh.n_cells))


def _check_cell_field(mesh, values, name) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (mesh.n_cells,):
        raise ValueError(
            f"{name} has shape {values.shape}, expected ({mesh.n_cells},)")
    return values


def _velocity(mesh, params, psi, velocity_gf0_factor):
    psi_tilde = remap_cell_to_vertex(mesh, psi)
    u = skew_gradient(mesh, psi_tilde)
    if velocity_gf0_factor:
        u = (params.g / params.f0) * u
    return psi_tilde, np.asarray(u)


def _edge_pv(mesh, q, defined) -> np.ndarray:
    """Edge PV average; one-sided where only one cell carries PV.

    defined is a boolean cell mask. Edges with no defined cell get 0 (their
    fluxes never enter a retained tendency row).
    """
    ce = mesh.cells_on_edge
    have = defined[ce]
    vals = np.where(have, q[ce], 0.0)
    count = have.sum(axis=1)
    return vals.sum(axis=1) / np.maximum(count, 1)


def diagnose_ivfv1(mesh, params: PhysicalParams, q, *,
                   velocity_gf0_factor: bool = True) -> Diagnostics:
    """Inviscid diagnosis: invert PV for psi, derive velocity and vorticity.

    zeta is recovered pointwise from the PV relation on every cell, so the
    pair (q, zeta) stays exactly consistent with psi.
    """
    q = _check_cell_field(mesh, q, "q")
    psi, l = solve_constrained_streamfunction(mesh, params, q)
    psi_tilde, u = _velocity(mesh, params, psi, velocity_gf0_factor)
    zeta = q - params.planetary_pv(mesh) \
        + (params.f0 / params.H) * (psi - params.topography(mesh))
    q_hat = np.asarray(remap_cell_to_edge(mesh, q))
    return Diagnostics(psi=psi, l=l, psi_tilde=np.asarray(psi_tilde), u=u,
                       zeta=zeta, q_hat=q_hat)


def tendency_ivfv1(mesh, params: PhysicalParams, forcing: Forcing,
                   state: SchemeState) -> np.ndarray:
    """dq/dt on every cell: -div(u q_hat) + wind - alpha*zeta."""
    d = state.diagnostics
    dq = -np.asarray(flux_divergence(mesh, d.u, d.q_hat)) + forcing.wind_curl
    if params.alpha != 0.0:
        dq = dq - params.alpha * d.zeta
    return dq


def tendency_ivfv2(mesh, params: PhysicalParams, forcing: Forcing,
                   state: SchemeState) -> np.ndarray:
    """dq/dt on interior cells only; boundary entries are zero."""
    dq = tendency_ivfv1(mesh, params, forcing, state)
    dq[mesh.boundary_cells] = 0.0
    return dq


def reset_boundary_pv(mesh, params: PhysicalParams, psi) -> np.ndarray:
    """Wall PV values implied by zero wall vorticity and the given psi."""
    bc = mesh.boundary_cells
    return params.planetary_pv(mesh)[bc] \
        - (params.f0 / params.H) * (psi[bc] - params.topography(mesh)[bc])


def diagnose_vsfv2(mesh, params: PhysicalParams, q, *,
                   boundary_pv_update: bool = True,
                   velocity_gf0_factor: bool = True,
                   zeta_gf0_factor: bool = True) -> Diagnostics:
    """Viscous diagnosis: vorticity from the streamfunction Laplacian.

    Taking zeta = (g/f0)*laplacian(psi) on boundary cells (instead of the
    zero wall vorticity the inviscid schemes use) carries the no-slip
    stress into the wall PV, which is refreshed here on every diagnosis.
    """
    q = _check_cell_field(mesh, q, "q")
    psi, l = solve_constrained_streamfunction(mesh, params, q)
    psi_tilde, u = _velocity(mesh, params, psi, velocity_gf0_factor)
    zeta = matrices(mesh).laplacian @ psi
    if zeta_gf0_factor:
        zeta = (params.g / params.f0) * zeta
    q_edge_source = q
    if boundary_pv_update:
        bc = mesh.boundary_cells
        q_edge_source = q.copy()
        q_edge_source[bc] = zeta[bc] + params.planetary_pv(mesh)[bc] \
            - (params.f0 / params.H) * (psi[bc] - params.topography(mesh)[bc])
    q_hat = np.asarray(remap_cell_to_edge(mesh, q_edge_source))
    return Diagnostics(psi=psi, l=l, psi_tilde=np.asarray(psi_tilde), u=u,
                       zeta=zeta, q_hat=q_hat)


def tendency_vsfv2(mesh, params: PhysicalParams, forcing: Forcing,
                   state: SchemeState) -> np.ndarray:
    """dq/dt on interior cells with explicit lateral viscosity."""
    d = state.diagnostics
    dq = -np.asarray(flux_divergence(mesh, d.u, d.q_hat)) + forcing.wind_curl
    if params.alpha != 0.0:
        dq = dq - params.alpha * d.zeta
    if params.mu != 0.0:
        dq = dq + params.mu * (matrices(mesh).laplacian @ d.zeta)
    dq[mesh.boundary_cells] = 0.0
    return dq


def diagnose_vsfv1(mesh, params: PhysicalParams, psi, *,
                   velocity_gf0_factor: bool = True,
                   zeta_gf0_factor: bool = True) -> Diagnostics:
    """Diagnosis from a streamfunction prognostic.

    Vorticity and PV exist on interior cells only; boundary entries are
    zero-filled and edge PV falls back to the available interior value.
    """
    psi = _check_cell_field(mesh, psi, "psi")
    bc = mesh.boundary_cells
    l = float(psi[bc[0]]) if bc.size else 0.0
    psi_tilde, u = _velocity(mesh, params, psi, velocity_gf0_factor)
    lap_psi = matrices(mesh).laplacian @ psi
    zeta = lap_psi * (params.g / params.f0) if zeta_gf0_factor else lap_psi.copy()
    interior_mask = np.zeros(mesh.n_cells, dtype=bool)
    interior_mask[mesh.interior_cells] = True
    q = np.zeros(mesh.n_cells)
    ic = mesh.interior_cells
    q[ic] = (params.g / params.f0) * lap_psi[ic] \
        + params.planetary_pv(mesh)[ic] \
        - (params.f0 / params.H) * (psi[ic] - params.topography(mesh)[ic])
    zeta[bc] = 0.0
    q_hat = _edge_pv(mesh, q, interior_mask)
    return Diagnostics(psi=psi, l=l, psi_tilde=np.asarray(psi_tilde), u=u,
                       zeta=zeta, q_hat=q_hat)


def step_vsfv1(mesh, params: PhysicalParams, forcing: Forcing,
               state: SchemeState, dt: float) -> SchemeState:
    """One semi-implicit Euler step of the viscous streamfunction scheme.

    Transport and wind are explicit; the elliptic part, bottom drag, and
    lateral viscosity are implicit in a bordered solve whose unknowns are
    all cell streamfunction values plus the common wall value.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    d = state.diagnostics
    psi = state.prognostic
    system = assemble_semi_implicit_system(mesh, params, dt)
    gf0 = params.g / params.f0
    explicit = dt * forcing.wind_curl \
        - dt * np.asarray(flux_divergence(mesh, d.u, d.q_hat)) \
        + gf0 * (matrices(mesh).laplacian @ psi) \
        - (params.f0 / params.H) * psi
    rhs = np.zeros(mesh.n_cells + 1)
    inner = mesh.inner_cells
    rhs[inner] = explicit[inner]
    solution = linear_solve(system, rhs)
    psi_new = solution[:mesh.n_cells]
    l_new = float(solution[mesh.n_cells])
    pinned = np.setdiff1d(np.arange(mesh.n_cells), inner)
    psi_new[pinned] = l_new
    new_diag = diagnose_vsfv1(mesh, params, psi_new)
    return SchemeState(time=state.time + dt, prognostic=psi_new,
                       diagnostics=new_diag)


def rk4_step(state: SchemeState, dt: float,
             tendency: Callable[[SchemeState], np.ndarray],
             diagnose: Callable[[np.ndarray], Diagnostics]) -> SchemeState:
    """Classical RK4 with diagnostics regenerated at every stage.

    Regenerating per stage keeps the stage velocities divergence-free and
    the semi-discrete conservation identities exact stage-wise.
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    q0 = state.prognostic
    t0 = state.time

    def stage(n, t, q, diag=None):
        st = SchemeState(time=t, prognostic=q,
                         diagnostics=diag if diag is not None else diagnose(q))
        k = tendency(st)
        if not np.all(np.isfinite(k)):
            raise SolverError(f"non-finite tendency at RK4 stage {n}")
        return k

    k1 = stage(1, t0, q0, state.diagnostics)
    k2 = stage(2, t0 + 0.5 * dt, q0 + 0.5 * dt * k1)
    k3 = stage(3, t0 + 0.5 * dt, q0 + 0.5 * dt * k2)
    k4 = stage(4, t0 + dt, q0 + dt * k3)
    q_new = q0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return SchemeState(time=t0 + dt, prognostic=q_new,
                       diagnostics=diagnose(q_new))


def step_ivfv1(mesh, params: PhysicalParams, forcing: Forcing,
               state: SchemeState, dt: float) -> SchemeState:
    return rk4_step(
        state, dt,
        tendency=lambda s: tendency_ivfv1(mesh, params, forcing, s),
        diagnose=lambda q: diagnose_ivfv1(mesh, params, q))


def step_ivfv2(mesh, params: PhysicalParams, forcing: Forcing,
               state: SchemeState, dt: float) -> SchemeState:
    """RK4 on interior PV, then the wall PV reset from the post-step psi."""
    new = rk4_step(
        state, dt,
        tendency=lambda s: tendency_ivfv2(mesh, params, forcing, s),
        diagnose=lambda q: diagnose_ivfv1(mesh, params, q))
    q = new.prognostic.copy()
    d = new.diagnostics
    bc = mesh.boundary_cells
    q[bc] = reset_boundary_pv(mesh, params, d.psi)
    # psi reads interior PV only, so it is unchanged; wall vorticity is
    # exactly zero after the reset and the edge PV follows the new wall PV
    zeta = d.zeta.copy()
    zeta[bc] = 0.0
    q_hat = np.asarray(remap_cell_to_edge(mesh, q))
    return SchemeState(time=new.time, prognostic=q,
                       diagnostics=d._replace(zeta=zeta, q_hat=q_hat))


def step_vsfv2(mesh, params: PhysicalParams, forcing: Forcing,
               state: SchemeState, dt: float) -> SchemeState:
    """RK4 on interior PV with per-diagnosis wall PV refresh."""
    new = rk4_step(
        state, dt,
        tendency=lambda s: tendency_vsfv2(mesh, params, forcing, s),
        diagnose=lambda q: diagnose_vsfv2(mesh, params, q))
    d = new.diagnostics
    bc = mesh.boundary_cells
    q = new.prognostic.copy()
    q[bc] = d.zeta[bc] + params.planetary_pv(mesh)[bc] \
        - (params.f0 / params.H) * (d.psi[bc] - params.topography(mesh)[bc])
    return replace(new, prognostic=q)


@dataclass(frozen=True)
class Scheme:
    """Uniform driver interface over the four schemes."""

    name: str
    prognostic: str  # "pv" or "streamfunction"
    initialize: Callable
    step: Callable


def _init_pv(diagnose):
    def initialize(mesh, params, q0):
        q0 = _check_cell_field(mesh, q0, "q0")
        return SchemeState(time=0.0, prognostic=q0.copy(),
                           diagnostics=diagnose(mesh, params, q0))
    return initialize


def _init_streamfunction(mesh, params, q0):
    q0 = _check_cell_field(mesh, q0, "q0")
    psi, _ = solve_constrained_streamfunction(mesh, params, q0)
    return SchemeState(time=0.0, prognostic=psi,
                       diagnostics=diagnose_vsfv1(mesh, params, psi))


SCHEMES = {
    "ivfv1": Scheme("ivfv1", "pv", _init_pv(diagnose_ivfv1), step_ivfv1),
    "ivfv2": Scheme("ivfv2", "pv", _init_pv(diagnose_ivfv1), step_ivfv2),
    "vsfv1": Scheme("vsfv1", "streamfunction", _init_streamfunction,
                    step_vsfv1),
    "vsfv2": Scheme("vsfv2", "pv", _init_pv(diagnose_vsfv2), step_vsfv2),
}
