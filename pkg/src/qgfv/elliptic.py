"""Constrained elliptic solves for the streamfunction.

Two linear problems are assembled here. The Helmholtz system inverts the
PV relation for the streamfunction on interior cells with a constant (but
unknown) boundary value, fixed by the zero-total-mass constraint through a
two-solve decomposition: a homogeneous-Dirichlet solve plus a harmonic
lift, combined with a scalar multiplier. The semi-implicit system used by
the viscous streamfunction scheme carries that multiplier as an explicit
unknown in a bordered matrix instead, because the implicit viscous wall
rows do not decompose.

Assembled systems and their factorizations are cached per mesh and
parameter set; only right-hand sides change between time steps.
"""

from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as sparse_linalg

from .errors import SolverError
from .operators import matrices

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class PhysicalParams:
    """Physical constants of the barotropic model.

    b is an optional per-cell bottom topography field (meters); None means
    a flat bottom.
    """

    f0: float = 1.0e-4
    beta: float = 1.6e-11
    g: float = 9.81
    H: float = 4000.0
    alpha: float = 0.0
    mu: float = 0.0
    b: np.ndarray | None = None

    def __post_init__(self):
        for name in ("f0", "beta", "g", "H", "alpha", "mu"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.f0 == 0.0:
            raise ValueError("f0 must be nonzero")
        if self.H <= 0.0:
            raise ValueError(f"H must be positive, got {self.H}")
        if self.g <= 0.0:
            raise ValueError(f"g must be positive, got {self.g}")
        if self.alpha < 0.0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.mu < 0.0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")
        if self.b is not None:
            b = np.ascontiguousarray(self.b, dtype=np.float64)
            if b.ndim != 1 or not np.all(np.isfinite(b)):
                raise ValueError("b must be a finite 1-d cell field")
            b.setflags(write=False)
            object.__setattr__(self, "b", b)

    def topography(self, mesh) -> np.ndarray:
        if self.b is None:
            return np.zeros(mesh.n_cells)
        if self.b.shape[0] != mesh.n_cells:
            raise ValueError(
                f"topography has {self.b.shape[0]} values for a mesh "
                f"with {mesh.n_cells} cells"
            )
        return self.b

    def planetary_pv(self, mesh) -> np.ndarray:
        """beta*y sampled at cell generator points."""
        return self.beta * mesh.cell_centers[:, 1]


def _params_key(params: PhysicalParams) -> tuple:
    b_key = None if params.b is None else params.b.tobytes()
    return (params.f0, params.beta, params.g, params.H,
            params.alpha, params.mu, b_key)


@dataclass(eq=False)
class LinearSystem:
    """A factorizable sparse system with a fixed unknown layout.

    layout is "cell" (one unknown per cell) or "cell+constant" (cell
    unknowns followed by one scalar). The rhs field holds a zero template
    of the right length; solves take their own right-hand side.
    """

    matrix: sparse.csr_matrix
    rhs: np.ndarray
    layout: str
    _lu: object = field(default=None, repr=False)
    _row_scale: np.ndarray | None = field(default=None, repr=False)
    _scaled: sparse.csr_matrix | None = field(default=None, repr=False)
    _lift: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_unknowns(self) -> int:
        return self.matrix.shape[0]

    def factorization(self):
        # rows mixing O(1) constraint entries with large elliptic entries
        # are equilibrated before factorization; the stored matrix keeps
        # the assembled coefficients untouched
        if self._lu is None:
            m = self.matrix.tocsr()
            row_max = np.zeros(m.shape[0])
            counts = np.diff(m.indptr)
            nonempty = counts > 0
            if m.nnz:
                row_max[nonempty] = np.maximum.reduceat(
                    np.abs(m.data), m.indptr[:-1][nonempty])
            scale = np.where(row_max > 0.0, 1.0 / np.where(row_max > 0.0,
                                                           row_max, 1.0), 1.0)
            scaled = (sparse.diags(scale) @ m).tocsr()
            try:
                lu = sparse_linalg.splu(scaled.tocsc())
            except RuntimeError as exc:
                raise SolverError(f"sparse factorization failed: {exc}") from exc
            self._row_scale = scale
            self._scaled = scaled
            self._lu = lu
        return self._lu

    def solve(self, rhs: np.ndarray | None = None) -> np.ndarray:
        """Direct solve; the residual is checked on the equilibrated system."""
        if rhs is None:
            rhs = self.rhs
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.shape != (self.n_unknowns,):
            raise ValueError(
                f"rhs has shape {rhs.shape}, expected ({self.n_unknowns},)"
            )
        lu = self.factorization()
        scaled_rhs = self._row_scale * rhs
        x = lu.solve(scaled_rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("linear solve produced non-finite values")
        residual = np.linalg.norm(self._scaled @ x - scaled_rhs)
        scale = np.linalg.norm(scaled_rhs)
        if residual > RESIDUAL_TOL * (scale if scale > 0.0 else 1.0):
            raise SolverError(
                f"linear solve residual {residual:.3e} exceeds tolerance "
                f"(rhs norm {scale:.3e})"
            )
        return x


def linear_solve(system: LinearSystem, rhs: np.ndarray | None = None) -> np.ndarray:
    return system.solve(rhs)


def _cell_mask_diagonal(mesh, cells) -> sparse.dia_matrix:
    mask = np.zeros(mesh.n_cells)
    mask[cells] = 1.0
    return sparse.diags(mask)


def _core_operator(mesh, params: PhysicalParams, scale: float) -> sparse.csr_matrix:
    """scale*(g/f0)*Laplacian - (f0/H)*I, as one CSR matrix."""
    lap = matrices(mesh).laplacian
    gf0 = params.g / params.f0
    core = (scale * gf0) * lap - (params.f0 / params.H) * sparse.identity(
        mesh.n_cells, format="csr")
    return core.tocsr()


_helmholtz_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()
_semi_implicit_cache: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def assemble_helmholtz(mesh, params: PhysicalParams) -> LinearSystem:
    """Streamfunction inversion operator with homogeneous Dirichlet rows.

    Interior-cell rows apply (g/f0)*Laplacian - (f0/H)*I; boundary-cell
    rows are the identity. Cached per (mesh, params).
    """
    per_mesh = _helmholtz_cache.setdefault(mesh, {})
    key = _params_key(params)
    system = per_mesh.get(key)
    if system is not None:
        return system

    core = _core_operator(mesh, params, 1.0)
    d_int = _cell_mask_diagonal(mesh, mesh.interior_cells)
    d_bc = _cell_mask_diagonal(mesh, mesh.boundary_cells)
    matrix = (d_int @ core + d_bc).tocsr()
    matrix.eliminate_zeros()
    matrix.sort_indices()
    system = LinearSystem(matrix=matrix, rhs=np.zeros(mesh.n_cells), layout="cell")
    per_mesh[key] = system
    logger.debug("assembled Helmholtz system: %d unknowns, %d nonzeros",
                 matrix.shape[0], matrix.nnz)
    return system


def solve_dirichlet_zero(mesh, system: LinearSystem,
                         rhs: np.ndarray) -> np.ndarray:
    """Solve with the given interior right-hand side and zero on the boundary.

    The caller supplies rhs already masked to interior rows (boundary rows
    of the assembled system are identity, so their rhs entries must be 0).
    The returned field is exactly zero on boundary cells.
    """
    if system.layout != "cell":
        raise ValueError("solve_dirichlet_zero needs a cell-layout system")
    out = system.solve(rhs)
    out[mesh.boundary_cells] = 0.0
    return out


def solve_harmonic_lift(mesh, system: LinearSystem) -> np.ndarray:
    """Solve for the lift field: zero interior forcing, value 1 on boundary.

    The result is strictly inside (0,1) on interior cells for any valid
    mesh (discrete comparison principle); a violation signals a broken
    assembly and raises SolverError. Cached on the system.
    """
    if system._lift is not None:
        return system._lift
    rhs = np.zeros(mesh.n_cells)
    rhs[mesh.boundary_cells] = 1.0
    lift = system.solve(rhs)
    lift[mesh.boundary_cells] = 1.0
    interior = lift[mesh.interior_cells]
    if interior.size and (interior.min() <= 0.0 or interior.max() >= 1.0):
        raise SolverError(
            "harmonic lift escaped (0,1) on interior cells; "
            "the discrete comparison principle failed"
        )
    lift.setflags(write=False)
    system._lift = lift
    return lift


def solve_constrained_streamfunction(mesh, params: PhysicalParams,
                                     q: np.ndarray) -> tuple[np.ndarray, float]:
    """Invert PV for the streamfunction with an unknown constant wall value.

    Returns (psi, l) where psi solves the Helmholtz problem with interior
    right-hand side q - beta*y - (f0/H)*b, psi = l on every boundary cell,
    and l is fixed by the zero-total-mass constraint sum(psi_i*|A_i|) = 0.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (mesh.n_cells,):
        raise ValueError(f"q has shape {q.shape}, expected ({mesh.n_cells},)")
    system = assemble_helmholtz(mesh, params)
    anomaly = q - params.planetary_pv(mesh) \
        - (params.f0 / params.H) * params.topography(mesh)
    rhs = np.zeros(mesh.n_cells)
    interior = mesh.interior_cells
    rhs[interior] = anomaly[interior]
    psi_hom = solve_dirichlet_zero(mesh, system, rhs)
    lift = solve_harmonic_lift(mesh, system)
    areas = mesh.cell_areas
    lift_mass = float(np.dot(lift, areas))
    if lift_mass <= 0.0:
        raise SolverError(
            f"lift field has nonpositive total mass {lift_mass:.3e}; "
            "mesh or parameters are invalid"
        )
    l = -float(np.dot(psi_hom, areas)) / lift_mass
    psi = psi_hom + l * lift
    psi[mesh.boundary_cells] = l
    return psi, l


def assemble_semi_implicit_system(mesh, params: PhysicalParams,
                                  dt: float) -> LinearSystem:
    """Bordered operator for the semi-implicit viscous streamfunction step.

    Unknowns are all cell streamfunction values plus the scalar wall value.
    Rows for interior cells away from the wall apply
    -mu*dt*(g/f0)*Laplacian^2 + (1+alpha*dt)*(g/f0)*Laplacian - (f0/H)*I;
    boundary and near-boundary cells are pinned to the scalar; the last
    row enforces zero total mass. Cached per (mesh, params, dt).
    """
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    per_mesh = _semi_implicit_cache.setdefault(mesh, {})
    key = (_params_key(params), float(dt))
    system = per_mesh.get(key)
    if system is not None:
        return system

    n = mesh.n_cells
    gf0 = params.g / params.f0
    core = _core_operator(mesh, params, 1.0 + params.alpha * dt)
    inner = mesh.inner_cells
    pinned = np.setdiff1d(np.arange(n), inner)
    d_inner = _cell_mask_diagonal(mesh, inner)
    top = d_inner @ core
    if params.mu != 0.0:
        lap = matrices(mesh).laplacian
        top = top - (params.mu * dt * gf0) * (d_inner @ (lap @ lap))
    top = top.tocsr()
    top.eliminate_zeros()

    # pinned rows: psi_i - l = 0; final row: sum(psi_i * |A_i|) = 0
    pin_cols = sparse.csr_matrix(
        (np.ones(pinned.size), (pinned, pinned)), shape=(n, n))
    pin_l = sparse.csr_matrix(
        (-np.ones(pinned.size), (pinned, np.zeros(pinned.size, dtype=np.int64))),
        shape=(n, 1))
    matrix = sparse.bmat(
        [[top + pin_cols, pin_l],
         [sparse.csr_matrix(mesh.cell_areas[np.newaxis, :]), None]],
        format="csr")
    matrix.sort_indices()
    if matrix.shape != (n + 1, n + 1):
        raise SolverError(
            f"bordered system is {matrix.shape}, expected {(n + 1, n + 1)}"
        )
    system = LinearSystem(matrix=matrix, rhs=np.zeros(n + 1),
                          layout="cell+constant")
    per_mesh[key] = system
    logger.debug("assembled semi-implicit system: %d unknowns, %d nonzeros",
                 matrix.shape[0], matrix.nnz)
    return system
