"""Conservative finite volume solvers for single-layer quasi-geostrophic
flow on boundary-conforming orthogonal primal-dual meshes."""

from ._backend import BACKEND
from .errors import (
    ConfigError,
    MeshError,
    MeshFormatError,
    MeshGenerationError,
    QGFVError,
    SolverError,
)
from .mesh import (
    PrimalDualMesh,
    ValidationReport,
    build_cvt_mesh,
    build_quad_mesh,
    load_mesh,
    save_mesh,
    validate_mesh,
)
from .elliptic import (
    LinearSystem,
    PhysicalParams,
    assemble_helmholtz,
    assemble_semi_implicit_system,
    linear_solve,
    solve_constrained_streamfunction,
)
from .schemes import SCHEMES, Diagnostics, Forcing, Scheme, SchemeState
from .diagnostics import DiagnosticRecord, compute_diagnostics
from .cases import (
    CaseConfig,
    boundary_layer_report,
    init_circular_flow,
    parse_config,
    steady_linear_solve,
    wind_curl_field,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CaseConfig",
    "ConfigError",
    "DiagnosticRecord",
    "Diagnostics",
    "Forcing",
    "LinearSystem",
    "MeshError",
    "MeshFormatError",
    "MeshGenerationError",
    "PhysicalParams",
    "PrimalDualMesh",
    "QGFVError",
    "SCHEMES",
    "Scheme",
    "SchemeState",
    "SolverError",
    "ValidationReport",
    "assemble_helmholtz",
    "assemble_semi_implicit_system",
    "boundary_layer_report",
    "build_cvt_mesh",
    "build_quad_mesh",
    "compute_diagnostics",
    "init_circular_flow",
    "linear_solve",
    "load_mesh",
    "parse_config",
    "save_mesh",
    "solve_constrained_streamfunction",
    "steady_linear_solve",
    "validate_mesh",
    "wind_curl_field",
    "__version__",
]
