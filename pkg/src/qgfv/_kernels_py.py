"""Pure-numpy reference implementations of the hot mesh-loop kernels.

Every function here has a signature-identical twin in the compiled
extension ``qgfv._kernels_c``; :mod:`qgfv._backend` picks one set at import
time.  All index arrays are int64, all value arrays float64.  Reductions
over compressed adjacency use ``np.add.reduceat``, which requires every
group to be non-empty; mesh construction guarantees that.
"""

from __future__ import annotations

import numpy as np


def remap_cell_to_vertex(offsets, cells, kites, vertex_areas, f):
    """Kite-area-weighted average of cell values onto vertices."""
    vals = kites * f[cells]
    return np.add.reduceat(vals, offsets[:-1]) / vertex_areas


def remap_cell_to_edge(ce0, ce1, f):
    """Arithmetic two-cell average of cell values onto edges."""
    return 0.5 * (f[ce0] + f[ce1])


def gradient_normal(ce0, ce1, d_e, f):
    """Normal derivative across each edge: difference over center distance."""
    return (f[ce1] - f[ce0]) / d_e


def skew_gradient_normal(ve0, ve1, ts0, ts1, l_e, g):
    """Normal component of the perpendicular gradient of a vertex field.

    Sums signed facet-endpoint values over the facet length; a missing
    second endpoint (boundary edge) contributes an implicit zero.
    """
    t0 = np.where(ts0 != 0.0, g[np.maximum(ve0, 0)] * ts0, 0.0)
    t1 = np.where(ts1 != 0.0, g[np.maximum(ve1, 0)] * ts1, 0.0)
    return (t0 + t1) / l_e


def divergence(offsets, edges, signs, l_e, cell_areas, u):
    """Outward flux sum of an edge-normal field per unit cell area."""
    vals = u[edges] * l_e[edges] * signs
    return np.add.reduceat(vals, offsets[:-1]) / cell_areas


def vertex_curl(offsets, edges, tsigns, d_e, vertex_areas, u):
    """Circulation of an edge-normal field around each vertex cell.

    The circulation runs counterclockwise; with the tangent convention
    t = k x n the signed sum enters with a minus.
    """
    vals = u[edges] * d_e[edges] * tsigns
    return -np.add.reduceat(vals, offsets[:-1]) / vertex_areas


def flux_divergence(offsets, edges, signs, l_e, cell_areas, u, q):
    """Divergence of the product field u*q in one pass."""
    vals = u[edges] * q[edges] * l_e[edges] * signs
    return np.add.reduceat(vals, offsets[:-1]) / cell_areas
