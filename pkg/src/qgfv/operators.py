"""Discrete operators on primal-dual meshes.

Scalar fields live at cell centers (:class:`CellField`) or dual vertices
(:class:`VertexField`); vector fields are represented by their normal
component on each edge (:class:`EdgeNormalField`), positive along the
edge's stored ``normal``.

The mimetic structure of these operators is what the schemes rely on:

* gradient and divergence are negative adjoints of each other under the
  cell and diamond inner products (discrete integration by parts),
* the skew gradient and the vertex curl are adjoints the same way,
* the divergence of a skew gradient vanishes identically, so streamfunction
  velocities are discretely non-divergent,
* the composite Laplacian acts on every cell, boundary cells included,
  with the no-flow-through-boundary closure built into the edge set.

Functional forms route through the selected kernel backend; matrix forms
are assembled once per mesh and cached.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _backend
from .errors import MeshError
from .mesh import PrimalDualMesh


class CellField(np.ndarray):
    """One value per primal cell."""


class VertexField(np.ndarray):
    """One value per dual vertex."""


class EdgeNormalField(np.ndarray):
    """Normal vector component per edge, signed along the stored normal."""


def cell_field(mesh: PrimalDualMesh, values) -> CellField:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.shape != (mesh.n_cells,):
        raise ValueError(f"expected shape ({mesh.n_cells},), got {arr.shape}")
    return arr.view(CellField)


def vertex_field(mesh: PrimalDualMesh, values) -> VertexField:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.shape != (mesh.n_vertices,):
        raise ValueError(f"expected shape ({mesh.n_vertices},), got {arr.shape}")
    return arr.view(VertexField)


def edge_normal_field(mesh: PrimalDualMesh, values) -> EdgeNormalField:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.shape != (mesh.n_edges,):
        raise ValueError(f"expected shape ({mesh.n_edges},), got {arr.shape}")
    return arr.view(EdgeNormalField)


def _require_two_cells(mesh: PrimalDualMesh) -> None:
    # edges with a single adjacent cell are rejected by mesh validation and
    # have no consistent two-point difference
    if np.any(mesh.cells_on_edge[:, 1] < 0):
        raise MeshError("operators require every edge to join exactly two cells")


def _as_values(arr, n: int, what: str) -> np.ndarray:
    values = np.ascontiguousarray(arr, dtype=np.float64)
    if values.shape != (n,):
        raise ValueError(f"{what}: expected shape ({n},), got {values.shape}")
    return values


# ---------------------------------------------------------------------------
# functional operators


def remap_cell_to_vertex(mesh: PrimalDualMesh, f) -> VertexField:
    """Average a cell field onto vertices with kite-area weights."""
    values = _as_values(f, mesh.n_cells, "cell field")
    out = _backend.remap_cell_to_vertex(
        mesh.vertex_cell_offsets,
        mesh.vertex_cell_indices,
        mesh.vertex_kite_areas,
        mesh.vertex_areas,
        values,
    )
    return out.view(VertexField)


def remap_cell_to_edge(mesh: PrimalDualMesh, f) -> EdgeNormalField:
    """Average the two adjacent cell values onto each edge."""
    _require_two_cells(mesh)
    values = _as_values(f, mesh.n_cells, "cell field")
    out = _backend.remap_cell_to_edge(
        np.ascontiguousarray(mesh.cells_on_edge[:, 0]),
        np.ascontiguousarray(mesh.cells_on_edge[:, 1]),
        values,
    )
    return out.view(EdgeNormalField)


def gradient(mesh: PrimalDualMesh, f) -> EdgeNormalField:
    """Two-point normal derivative of a cell field across each edge."""
    _require_two_cells(mesh)
    values = _as_values(f, mesh.n_cells, "cell field")
    out = _backend.gradient_normal(
        np.ascontiguousarray(mesh.cells_on_edge[:, 0]),
        np.ascontiguousarray(mesh.cells_on_edge[:, 1]),
        mesh.d_e,
        values,
    )
    return out.view(EdgeNormalField)


def skew_gradient(mesh: PrimalDualMesh, g) -> EdgeNormalField:
    """Normal component of the rotated gradient of a vertex field.

    On boundary edges the facet ends at the domain boundary, where the
    field value is taken to be zero; a vertex field that is constant and
    nonzero therefore produces a nonzero result on boundary edges only.
    """
    values = _as_values(g, mesh.n_vertices, "vertex field")
    out = _backend.skew_gradient_normal(
        np.ascontiguousarray(mesh.vertices_on_edge[:, 0]),
        np.ascontiguousarray(mesh.vertices_on_edge[:, 1]),
        np.ascontiguousarray(mesh.t_sign[:, 0]),
        np.ascontiguousarray(mesh.t_sign[:, 1]),
        mesh.l_e,
        values,
    )
    return out.view(EdgeNormalField)


def divergence(mesh: PrimalDualMesh, u) -> CellField:
    """Outward flux balance of an edge-normal field over each cell.

    Cell boundaries that coincide with the domain boundary carry no edges,
    so the closure is automatically no-flow-through.
    """
    values = _as_values(u, mesh.n_edges, "edge field")
    out = _backend.divergence(
        mesh.cell_edge_offsets,
        mesh.cell_edge_indices,
        mesh.cell_edge_signs,
        mesh.l_e,
        mesh.cell_areas,
        values,
    )
    return out.view(CellField)


def curl(mesh: PrimalDualMesh, u) -> VertexField:
    """Circulation of an edge-normal field per unit vertex-cell area."""
    values = _as_values(u, mesh.n_edges, "edge field")
    out = _backend.vertex_curl(
        mesh.vertex_edge_offsets,
        mesh.vertex_edge_indices,
        mesh.vertex_edge_signs,
        mesh.d_e,
        mesh.vertex_areas,
        values,
    )
    return out.view(VertexField)


def flux_divergence(mesh: PrimalDualMesh, u, q_edge) -> CellField:
    """Divergence of the edgewise product ``u * q_edge`` in one pass."""
    u_values = _as_values(u, mesh.n_edges, "edge field")
    q_values = _as_values(q_edge, mesh.n_edges, "edge field")
    out = _backend.flux_divergence(
        mesh.cell_edge_offsets,
        mesh.cell_edge_indices,
        mesh.cell_edge_signs,
        mesh.l_e,
        mesh.cell_areas,
        u_values,
        q_values,
    )
    return out.view(CellField)


def laplacian(mesh: PrimalDualMesh, f) -> CellField:
    """Composite divergence-of-gradient acting on all cells."""
    return divergence(mesh, gradient(mesh, f))


def cell_inner(mesh: PrimalDualMesh, f, g) -> float:
    """Area-weighted inner product of two cell fields."""
    fv = _as_values(f, mesh.n_cells, "cell field")
    gv = _as_values(g, mesh.n_cells, "cell field")
    return float(np.sum(fv * gv * mesh.cell_areas))


def vertex_inner(mesh: PrimalDualMesh, f, g) -> float:
    """Area-weighted inner product of two vertex fields."""
    fv = _as_values(f, mesh.n_vertices, "vertex field")
    gv = _as_values(g, mesh.n_vertices, "vertex field")
    return float(np.sum(fv * gv * mesh.vertex_areas))


def edge_inner(mesh: PrimalDualMesh, u, w) -> float:
    """Diamond-area-weighted inner product of two edge-normal fields."""
    uv = _as_values(u, mesh.n_edges, "edge field")
    wv = _as_values(w, mesh.n_edges, "edge field")
    return float(np.sum(uv * wv * mesh.edge_diamond_areas))


# ---------------------------------------------------------------------------
# sparse-matrix forms


@dataclass(frozen=True)
class OperatorMatrices:
    """Sparse CSR forms of the functional operators for one mesh.

    ``laplacian`` is the exact product ``divergence @ gradient``; rows of
    every matrix reproduce the functional operators to the last bit of the
    summation order only when applied with the same groupings, so matrix
    and kernel applications may differ by roundoff.
    """

    remap_c2v: sp.csr_matrix
    remap_c2e: sp.csr_matrix
    gradient: sp.csr_matrix
    skew_gradient: sp.csr_matrix
    divergence: sp.csr_matrix
    curl: sp.csr_matrix
    laplacian: sp.csr_matrix


_matrix_cache: "weakref.WeakKeyDictionary[PrimalDualMesh, OperatorMatrices]" = (
    weakref.WeakKeyDictionary()
)


def matrices(mesh: PrimalDualMesh) -> OperatorMatrices:
    """Assemble (or fetch cached) sparse-matrix operator forms."""
    cached = _matrix_cache.get(mesh)
    if cached is not None:
        return cached
    _require_two_cells(mesh)
    n_c, n_v, n_e = mesh.n_cells, mesh.n_vertices, mesh.n_edges

    rows = np.repeat(np.arange(n_e), 2)
    cols = mesh.cells_on_edge.ravel()

    inv_d = 1.0 / mesh.d_e
    grad = sp.csr_matrix(
        (np.column_stack([-inv_d, inv_d]).ravel(), (rows, cols)), shape=(n_e, n_c)
    )
    c2e = sp.csr_matrix((np.full(2 * n_e, 0.5), (rows, cols)), shape=(n_e, n_c))

    present = (mesh.t_sign != 0.0).ravel()
    skew_rows = rows[present]
    skew_cols = mesh.vertices_on_edge.ravel()[present]
    skew_vals = (mesh.t_sign / mesh.l_e[:, None]).ravel()[present]
    skew = sp.csr_matrix((skew_vals, (skew_rows, skew_cols)), shape=(n_e, n_v))

    div_vals = (
        mesh.l_e[mesh.cell_edge_indices]
        * mesh.cell_edge_signs
        / np.repeat(mesh.cell_areas, np.diff(mesh.cell_edge_offsets))
    )
    div = sp.csr_matrix(
        (div_vals, mesh.cell_edge_indices, mesh.cell_edge_offsets), shape=(n_c, n_e)
    )

    curl_vals = (
        -mesh.d_e[mesh.vertex_edge_indices]
        * mesh.vertex_edge_signs
        / np.repeat(mesh.vertex_areas, np.diff(mesh.vertex_edge_offsets))
    )
    curl_m = sp.csr_matrix(
        (curl_vals, mesh.vertex_edge_indices, mesh.vertex_edge_offsets), shape=(n_v, n_e)
    )

    c2v_vals = mesh.vertex_kite_areas / np.repeat(
        mesh.vertex_areas, np.diff(mesh.vertex_cell_offsets)
    )
    c2v = sp.csr_matrix(
        (c2v_vals, mesh.vertex_cell_indices, mesh.vertex_cell_offsets), shape=(n_v, n_c)
    )

    result = OperatorMatrices(
        remap_c2v=c2v,
        remap_c2e=c2e,
        gradient=grad,
        skew_gradient=skew,
        divergence=div,
        curl=curl_m,
        laplacian=(div @ grad).tocsr(),
    )
    _matrix_cache[mesh] = result
    return result
