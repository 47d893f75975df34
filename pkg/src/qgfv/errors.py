"""Exception hierarchy for the qgfv package."""


class QGFVError(Exception):
    """Base class for all qgfv errors."""


class MeshError(QGFVError):
    """Invalid mesh data or mesh construction arguments."""


class MeshFormatError(MeshError):
    """A mesh file violates the qgmesh format."""


class MeshGenerationError(MeshError):
    """Mesh generation failed (degenerate input or rejected result)."""


class ConfigError(QGFVError):
    """Invalid case configuration."""


class SolverError(QGFVError):
    """A linear solve or time step failed."""
