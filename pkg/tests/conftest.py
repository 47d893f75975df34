"""Shared mesh fixtures.

Meshes are session-scoped: they are immutable, and reusing them keeps the
operator-matrix and factorization caches warm across test modules.
"""

import pytest

from qgfv.mesh import build_cvt_mesh, build_quad_mesh

UNIT_SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]


@pytest.fixture(scope="session")
def q2():
    """3x3-center unit-square mesh: one interior cell, eight wall cells."""
    return build_quad_mesh(2, 2, 1.0, 1.0)


@pytest.fixture(scope="session")
def quad8():
    return build_quad_mesh(8, 8, 1.0, 1.0)


@pytest.fixture(scope="session")
def cvt64():
    return build_cvt_mesh(UNIT_SQUARE, 64, 200, 7)


PENTAGON = [(0.0, 0.0), (2.0, 0.0), (2.6, 1.2), (1.0, 2.2), (-0.6, 1.2)]


@pytest.fixture(scope="session")
def cvt_pentagon():
    return build_cvt_mesh(PENTAGON, 80, 120, 3)
