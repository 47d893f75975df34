"""Experiment definitions and steady reference solves.

Shipped cases: a freely evolving circular vortex (conservation testing),
a wind-driven basin (double-gyre forcing), and steady linear solves with
bottom drag or lateral viscosity that exhibit the classical western
boundary layer. Case configuration files are flat key = value text.

The basin default is a square of side 3.336e6 m (30 degrees of arc at
Earth radius 6.371e6 m) with midlatitude f0 and beta; these are
implementation constants, not derived quantities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .errors import ConfigError, SolverError
from .elliptic import LinearSystem, PhysicalParams
from .mesh import build_cvt_mesh, build_quad_mesh, load_mesh
from .operators import matrices, remap_cell_to_edge
from .schemes import (SCHEMES, Forcing, diagnose_vsfv2, rk4_step,
                      tendency_vsfv2, SchemeState)

logger = logging.getLogger(__name__)

DEFAULT_BASIN = 3.336e6
DEFAULT_TAU0 = 1.0e-4
DEFAULT_DT = 1350.0
STOMMEL_DEFAULT_ALPHA = 5.0e-8
MUNK_DEFAULT_MU = 100.0

CASE_KINDS = ("circular", "wind_basin", "steady_stommel", "steady_munk")

# fraction of the basin extents occupied by the vortex widths
CIRCULAR_WIDTH_X = 0.25
CIRCULAR_WIDTH_Y = 0.16592

_CONFIG_KEYS = ("case", "scheme", "mesh_file", "mesh.quad", "mesh.cvt",
                "dt", "steps", "output_every",
                "f0", "beta", "g", "H", "alpha", "mu", "tau0")


def _extents(mesh):
    x = mesh.cell_centers[:, 0]
    y = mesh.cell_centers[:, 1]
    return float(x.min()), float(x.max()), float(y.min()), float(y.max())


@dataclass(frozen=True)
class CaseConfig:
    """Parsed experiment configuration."""

    case: str
    scheme: str | None = None
    mesh_file: str | None = None
    mesh_quad: tuple[int, int, float, float] | None = None
    mesh_cvt: tuple[int, int, int] | None = None
    dt: float = DEFAULT_DT
    steps: int | None = None
    output_every: int = 1
    f0: float = 1.0e-4
    beta: float = 1.6e-11
    g: float = 9.81
    H: float = 4000.0
    alpha: float = 0.0
    mu: float = 0.0
    tau0: float = DEFAULT_TAU0

    def __post_init__(self):
        if self.case not in CASE_KINDS:
            raise ConfigError(
                f"unknown case {self.case!r}; expected one of {CASE_KINDS}")
        if self.scheme is not None and self.scheme not in SCHEMES:
            raise ConfigError(
                f"unknown scheme {self.scheme!r}; "
                f"expected one of {tuple(SCHEMES)}")
        sources = sum(s is not None for s in
                      (self.mesh_file, self.mesh_quad, self.mesh_cvt))
        if sources != 1:
            raise ConfigError(
                "exactly one mesh source is required "
                "(mesh_file, mesh.quad, or mesh.cvt)")
        if not self.dt > 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.steps is not None and self.steps < 0:
            raise ConfigError(f"steps must be nonnegative, got {self.steps}")
        if self.output_every < 1:
            raise ConfigError(
                f"output_every must be at least 1, got {self.output_every}")

    def physical_params(self) -> PhysicalParams:
        try:
            return PhysicalParams(f0=self.f0, beta=self.beta, g=self.g,
                                  H=self.H, alpha=self.alpha, mu=self.mu)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def build_mesh(self):
        if self.mesh_file is not None:
            return load_mesh(self.mesh_file)
        if self.mesh_quad is not None:
            nx, ny, lx, ly = self.mesh_quad
            return build_quad_mesh(nx, ny, lx, ly)
        n, iters, seed = self.mesh_cvt
        square = [(0.0, 0.0), (DEFAULT_BASIN, 0.0),
                  (DEFAULT_BASIN, DEFAULT_BASIN), (0.0, DEFAULT_BASIN)]
        return build_cvt_mesh(square, n, iters, seed)

    def initial_pv(self, mesh, params: PhysicalParams) -> np.ndarray:
        if self.case == "circular":
            _, q0 = init_circular_flow(mesh, params)
            return q0
        # wind-driven and steady cases start from rest
        return params.planetary_pv(mesh) \
            + (params.f0 / params.H) * params.topography(mesh)

    def forcing(self, mesh, params: PhysicalParams) -> Forcing:
        if self.case == "circular":
            return Forcing.none(mesh)
        curl = wind_curl_field(mesh, tau0=self.tau0)
        return Forcing(wind_curl=curl / params.H)


def _parse_scalar(key, value, kind):
    try:
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc


def _parse_tuple(key, value, kinds):
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != len(kinds):
        raise ConfigError(
            f"{key!r} needs {len(kinds)} comma-separated values, "
            f"got {len(parts)}")
    return tuple(_parse_scalar(key, p, k) for p, k in zip(parts, kinds))


def parse_config(path) -> CaseConfig:
    """Read a key = value case file; unknown or repeated keys are errors."""
    raw = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(
                    f"{path}:{lineno}: expected key = value, got {text!r}")
            key, _, value = text.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in raw:
                raise ConfigError(f"{path}:{lineno}: repeated key {key!r}")
            if not value:
                raise ConfigError(f"{path}:{lineno}: empty value for {key!r}")
            raw[key] = value

    if "case" not in raw:
        raise ConfigError(f"{path}: missing required key 'case'")
    kwargs = {"case": raw.pop("case")}
    if "scheme" in raw:
        kwargs["scheme"] = raw.pop("scheme")
    if "mesh_file" in raw:
        kwargs["mesh_file"] = raw.pop("mesh_file")
    if "mesh.quad" in raw:
        kwargs["mesh_quad"] = _parse_tuple(
            "mesh.quad", raw.pop("mesh.quad"), (int, int, float, float))
    if "mesh.cvt" in raw:
        kwargs["mesh_cvt"] = _parse_tuple(
            "mesh.cvt", raw.pop("mesh.cvt"), (int, int, int))
    if "steps" in raw:
        kwargs["steps"] = _parse_scalar("steps", raw.pop("steps"), int)
    if "output_every" in raw:
        kwargs["output_every"] = _parse_scalar(
            "output_every", raw.pop("output_every"), int)
    for key in ("dt", "f0", "beta", "g", "H", "alpha", "mu", "tau0"):
        if key in raw:
            kwargs[key] = _parse_scalar(key, raw.pop(key), float)
    assert not raw
    return CaseConfig(**kwargs)


def init_circular_flow(mesh, params: PhysicalParams, center=None,
                       widths=None) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian vortex with a tanh cutoff, and the PV that reproduces it.

    Returns (psi0, q0). The profile is flat at the boundary by
    construction; boundary values are clamped to the far-field constant and
    the area-weighted mean is removed so the zero-mass constrained solve
    returns exactly this field. A boundary deviation above 1e-6 of the
    peak means the vortex does not fit the basin.
    """
    xmin, xmax, ymin, ymax = _extents(mesh)
    if center is None:
        center = (0.5 * (xmin + xmax), 0.5 * (ymin + ymax))
    if widths is None:
        widths = (CIRCULAR_WIDTH_X * (xmax - xmin),
                  CIRCULAR_WIDTH_Y * (ymax - ymin))
    wx, wy = float(widths[0]), float(widths[1])
    if wx <= 0.0 or wy <= 0.0:
        raise ConfigError(f"vortex widths must be positive, got {widths}")
    x = mesh.cell_centers[:, 0]
    y = mesh.cell_centers[:, 1]
    d = np.sqrt(((y - center[1]) / wy) ** 2 + ((x - center[0]) / wx) ** 2)
    psi = np.exp(-d * d) * (1.0 - np.tanh(20.0 * (d - 1.5)))
    peak = float(np.abs(psi).max())
    wall = float(np.abs(psi[mesh.boundary_cells]).max())
    if wall > 1e-6 * peak:
        raise ConfigError(
            f"vortex does not decay at the boundary "
            f"(wall/peak = {wall / peak:.3e} > 1e-6); enlarge the domain "
            f"or shrink the widths")
    psi[mesh.boundary_cells] = 0.0
    psi -= np.dot(psi, mesh.cell_areas) / mesh.domain_area
    q = (params.g / params.f0) * (matrices(mesh).laplacian @ psi) \
        + params.planetary_pv(mesh) \
        - (params.f0 / params.H) * (psi - params.topography(mesh))
    return psi, q


def wind_curl_field(mesh, tau0: float = DEFAULT_TAU0, y0: float | None = None,
                    dy: float | None = None, sign: float = -1.0) -> np.ndarray:
    """Curl of a zonal wind stress tau(y) = tau0*cos(pi*(y-y0)/dy).

    Returns the per-cell curl values (not yet divided by H). The default
    sign of -1 produces the anticyclonic subtropical gyre; sign=+1 gives
    the mirror circulation, whose exact basin integral is 2*tau0*Lx.
    """
    xmin, xmax, ymin, ymax = _extents(mesh)
    if y0 is None:
        y0 = ymin
    if dy is None:
        dy = ymax - ymin
    if not dy > 0.0:
        raise ConfigError(f"wind profile span must be positive, got {dy}")
    y = mesh.cell_centers[:, 1]
    return sign * tau0 * (math.pi / dy) * np.sin(math.pi * (y - y0) / dy)


def _steady_params(params: PhysicalParams, mode: str) -> PhysicalParams:
    if mode == "stommel":
        alpha = params.alpha if params.alpha > 0.0 else STOMMEL_DEFAULT_ALPHA
        return replace(params, alpha=alpha, mu=0.0)
    if mode == "munk":
        mu = params.mu if params.mu > 0.0 else MUNK_DEFAULT_MU
        return replace(params, mu=mu)
    raise ConfigError(f"unknown steady mode {mode!r}; "
                      "expected 'stommel' or 'munk'")


def assemble_steady_system(mesh, params: PhysicalParams) -> LinearSystem:
    """Steady linearized operator in the streamfunction.

    Transport is frozen at the planetary PV: interior rows balance the
    divergence of (velocity * planetary edge PV) against drag and
    viscosity acting on the vorticity; boundary cells are pinned to the
    scalar wall value and the last row enforces zero total mass.
    """
    mats = matrices(mesh)
    gf0 = params.g / params.f0
    n = mesh.n_cells
    q_beta_edge = np.asarray(remap_cell_to_edge(
        mesh, params.planetary_pv(mesh)))
    velocity_of_psi = gf0 * (mats.skew_gradient @ mats.remap_c2v)
    transport = mats.divergence @ sparse.diags(q_beta_edge) @ velocity_of_psi
    op = transport
    if params.alpha != 0.0:
        op = op + (params.alpha * gf0) * mats.laplacian
    if params.mu != 0.0:
        op = op - (params.mu * gf0) * (mats.laplacian @ mats.laplacian)
    interior = mesh.interior_cells
    bc = mesh.boundary_cells
    mask = np.zeros(n)
    mask[interior] = 1.0
    top = (sparse.diags(mask) @ op).tocsr()
    top.eliminate_zeros()
    pin_cols = sparse.csr_matrix(
        (np.ones(bc.size), (bc, bc)), shape=(n, n))
    pin_l = sparse.csr_matrix(
        (-np.ones(bc.size), (bc, np.zeros(bc.size, dtype=np.int64))),
        shape=(n, 1))
    matrix = sparse.bmat(
        [[top + pin_cols, pin_l],
         [sparse.csr_matrix(mesh.cell_areas[np.newaxis, :]), None]],
        format="csr")
    matrix.sort_indices()
    return LinearSystem(matrix=matrix, rhs=np.zeros(n + 1),
                        layout="cell+constant")


def _march_to_steady(mesh, params: PhysicalParams, wind_curl, dt,
                     max_steps) -> np.ndarray:
    """Integrate the linearized tendency to steady state with RK4.

    Reuses the viscous PV tendency with the transported edge PV frozen at
    its planetary value, so the march and the direct assembly discretize
    the identical steady operator.
    """
    q_beta_edge = np.asarray(remap_cell_to_edge(
        mesh, params.planetary_pv(mesh)))
    forcing = Forcing(wind_curl=np.asarray(wind_curl) / params.H)

    def diagnose(q):
        full = diagnose_vsfv2(mesh, params, q)
        return full._replace(q_hat=q_beta_edge)

    def tendency(state):
        return tendency_vsfv2(mesh, params, forcing, state)

    lx = _extents(mesh)[1] - _extents(mesh)[0]
    t_ref = 1.0 / (params.alpha + params.mu * math.pi ** 2 / lx ** 2)
    q0 = params.planetary_pv(mesh) \
        + (params.f0 / params.H) * params.topography(mesh)
    state = SchemeState(time=0.0, prognostic=q0, diagnostics=diagnose(q0))
    threshold = 1e-12 / t_ref
    for step in range(1, max_steps + 1):
        new = rk4_step(state, dt, tendency, diagnose)
        change = np.abs(new.diagnostics.psi - state.diagnostics.psi).max()
        scale = np.abs(new.diagnostics.psi).max()
        state = new
        if scale > 0.0 and change / dt <= threshold * scale:
            logger.info("steady march converged after %d steps", step)
            return state.diagnostics.psi.copy()
    raise SolverError(
        f"steady march did not converge within {max_steps} steps "
        f"(last relative change per relaxation time "
        f"{change / dt * t_ref / max(scale, 1e-300):.3e}, tolerance 1e-12)")


def steady_linear_solve(mesh, params: PhysicalParams, wind_curl,
                        mode: str, method: str = "direct",
                        dt: float | None = None,
                        max_steps: int = 200_000) -> np.ndarray:
    """Steady linear gyre solution with drag (stommel) or viscosity (munk).

    wind_curl holds per-cell curl(tau) values. method is "direct" (sparse
    bordered solve) or "march" (RK4 time integration of the linearized
    tendency to stationarity); the two agree to solver accuracy.
    """
    wind_curl = np.asarray(wind_curl, dtype=np.float64)
    if wind_curl.shape != (mesh.n_cells,):
        raise ValueError(
            f"wind_curl has shape {wind_curl.shape}, "
            f"expected ({mesh.n_cells},)")
    eff = _steady_params(params, mode)
    if method == "direct":
        system = assemble_steady_system(mesh, eff)
        rhs = np.zeros(mesh.n_cells + 1)
        interior = mesh.interior_cells
        rhs[interior] = wind_curl[interior] / eff.H
        solution = system.solve(rhs)
        psi = solution[:mesh.n_cells]
        psi[mesh.boundary_cells] = solution[mesh.n_cells]
        return psi
    if method == "march":
        if dt is None:
            raise ValueError("march method needs an explicit dt")
        return _march_to_steady(mesh, eff, wind_curl, dt, max_steps)
    raise ValueError(f"unknown method {method!r}; "
                     "expected 'direct' or 'march'")


def boundary_layer_report(mesh, psi) -> dict:
    """Western/eastern boundary-layer statistics of a steady gyre field.

    Gradients are the edge normal differences; widths are the distances
    from each wall at which the mid-basin profile first reaches
    (1 - 1/e) of its extreme deviation from the wall value.
    """
    psi = np.asarray(psi, dtype=np.float64)
    xmin, xmax, ymin, ymax = _extents(mesh)
    width = xmax - xmin
    ce = mesh.cells_on_edge
    mid = 0.5 * (mesh.cell_centers[ce[:, 0]] + mesh.cell_centers[ce[:, 1]])
    grad = (psi[ce[:, 1]] - psi[ce[:, 0]]) / mesh.d_e
    grad_x = np.abs(grad * mesh.normal[:, 0])
    west = mid[:, 0] <= xmin + 0.1 * width
    east = mid[:, 0] >= xmax - 0.1 * width
    west_max = float(grad_x[west].max()) if west.any() else 0.0
    east_max = float(grad_x[east].max()) if east.any() else 0.0
    ratio = west_max / east_max if east_max > 0.0 else math.inf

    # mid-height strip profile for the e-folding widths
    y_mid = 0.5 * (ymin + ymax)
    h_ref = float(np.mean(mesh.d_e))
    strip = np.abs(mesh.cell_centers[:, 1] - y_mid) <= 0.75 * h_ref
    if not strip.any():
        strip = np.abs(mesh.cell_centers[:, 1] - y_mid) <= 1.5 * h_ref
    order = np.argsort(mesh.cell_centers[strip, 0])
    xs = mesh.cell_centers[strip, 0][order]
    bc = mesh.boundary_cells
    wall_value = float(psi[bc[0]]) if bc.size else 0.0
    dev = np.abs(psi[strip][order] - wall_value)
    target = (1.0 - 1.0 / math.e) * float(dev.max()) if dev.size else 0.0

    def crossing(xs_a, dev_a, wall_x):
        for k in range(len(dev_a)):
            if dev_a[k] >= target:
                if k == 0 or dev_a[k] == dev_a[k - 1]:
                    return abs(xs_a[k] - wall_x)
                frac = (target - dev_a[k - 1]) / (dev_a[k] - dev_a[k - 1])
                x_star = xs_a[k - 1] + frac * (xs_a[k] - xs_a[k - 1])
                return abs(x_star - wall_x)
        return math.nan

    west_width = crossing(xs, dev, xmin) if dev.size else math.nan
    east_width = crossing(xs[::-1], dev[::-1], xmax) if dev.size else math.nan
    return {
        "west_max_gradient": west_max,
        "east_max_gradient": east_max,
        "west_east_ratio": ratio,
        "west_efold_width": west_width,
        "east_efold_width": east_width,
    }
