"""Boundary-conforming orthogonal primal-dual meshes.

A mesh couples a primal tessellation (one cell per generator point, with the
domain boundary passing through the centers of boundary cells) to an
orthogonal dual (one vertex per structured-grid corner or Delaunay triangle
circumcenter).  Every pair of adjacent cells defines an edge pair: the
segment joining the two cell centers (length ``d_e``, direction ``normal``)
and the orthogonal facet separating the cells (length ``l_e``).  Interior
facets join two vertices; boundary facets join one vertex to the boundary
point midway between the two cell centers.

Two generators are provided: a structured quadrilateral mesh on a rectangle
(:func:`build_quad_mesh`) and a centroidal Voronoi tessellation of an
arbitrary simple polygon (:func:`build_cvt_mesh`).  Meshes can be checked
with :func:`validate_mesh` and serialized to the plain-text ``qgmesh``
format with :func:`save_mesh` / :func:`load_mesh`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay, Voronoi
from scipy.spatial import QhullError
from shapely.geometry import Point, Polygon
from shapely.geometry.polygon import orient
from shapely.prepared import prep

from .errors import MeshError, MeshFormatError, MeshGenerationError

logger = logging.getLogger(__name__)

# cell classification codes
CELL_INTERIOR = 0  # strictly interior cell, no boundary-cell neighbor
CELL_BOUNDARY = 1  # cell center lies on the domain boundary
CELL_NEAR_BOUNDARY = 2  # interior cell sharing an edge with a boundary cell

# edge classification codes
EDGE_INTERIOR = 0  # facet joins two vertices
EDGE_BOUNDARY = 1  # facet joins one vertex to the boundary

_CELL_TAGS = {CELL_INTERIOR: "IC", CELL_BOUNDARY: "BC", CELL_NEAR_BOUNDARY: "BC1"}
_CELL_CODES = {tag: code for code, tag in _CELL_TAGS.items()}
_EDGE_TAGS = {EDGE_INTERIOR: "IE", EDGE_BOUNDARY: "BE"}
_EDGE_CODES = {tag: code for code, tag in _EDGE_TAGS.items()}

#: orthogonality acceptance thresholds (radians)
STRUCTURED_ORTHOGONALITY_TOL = 1e-8
CVT_ORTHOGONALITY_TOL = 1e-3

_REL_TOL = 1e-12  # relative tolerance for area-partition identities


@dataclass(frozen=True, eq=False)
class PrimalDualMesh:
    """Immutable geometric and topological description of a primal-dual mesh.

    All index arrays are 0-based.  ``cells_on_edge`` always holds two cell
    indices per edge for meshes produced by the builders in this module; a
    ``-1`` in the second slot (possible only in hand-written files) marks an
    edge with a single adjacent cell, which :func:`validate_mesh` rejects.
    ``vertices_on_edge`` holds ``-1`` in the second slot on boundary edges.

    ``n_sign[e, k]`` is the direction indicator of edge ``e`` relative to
    cell ``cells_on_edge[e, k]``: ``+1`` if ``normal[e]`` points away from
    that cell.  ``t_sign[e, k]`` is the analogous indicator of the facet
    tangent ``t_e = k x n_e`` relative to vertex ``vertices_on_edge[e, k]``:
    ``+1`` if ``t_e`` points away from that vertex along the facet.
    """

    cell_centers: np.ndarray  # (n_cells, 2) generator positions [m]
    vertex_positions: np.ndarray  # (n_vertices, 2) dual vertex positions [m]
    cell_areas: np.ndarray  # (n_cells,) [m^2]
    vertex_areas: np.ndarray  # (n_vertices,) [m^2]
    edge_diamond_areas: np.ndarray  # (n_edges,) 0.5 * d_e * l_e [m^2]
    d_e: np.ndarray  # (n_edges,) center-to-center distance [m]
    l_e: np.ndarray  # (n_edges,) facet length [m]
    normal: np.ndarray  # (n_edges, 2) unit vector along the center segment
    cells_on_edge: np.ndarray  # (n_edges, 2) int64
    vertices_on_edge: np.ndarray  # (n_edges, 2) int64, -1 = absent
    n_sign: np.ndarray  # (n_edges, 2) in {+1,-1}, aligned with cells_on_edge
    t_sign: np.ndarray  # (n_edges, 2) in {+1,-1,0}, aligned with vertices_on_edge
    cell_class: np.ndarray  # (n_cells,) int8, CELL_* codes
    edge_class: np.ndarray  # (n_edges,) int8, EDGE_* codes
    # compressed adjacency (offsets have length n+1; indices are grouped per
    # cell/vertex in ascending owner order)
    cell_edge_offsets: np.ndarray
    cell_edge_indices: np.ndarray
    cell_edge_signs: np.ndarray  # n_sign aligned with cell_edge_indices
    vertex_edge_offsets: np.ndarray
    vertex_edge_indices: np.ndarray
    vertex_edge_signs: np.ndarray  # t_sign aligned with vertex_edge_indices
    cell_vertex_offsets: np.ndarray
    cell_vertex_indices: np.ndarray
    cell_kite_areas: np.ndarray  # kite area per (cell, vertex) incidence
    vertex_cell_offsets: np.ndarray
    vertex_cell_indices: np.ndarray
    vertex_kite_areas: np.ndarray  # same kites grouped by vertex

    @property
    def n_cells(self) -> int:
        return self.cell_centers.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.vertex_positions.shape[0]

    @property
    def n_edges(self) -> int:
        return self.d_e.shape[0]

    @property
    def domain_area(self) -> float:
        return float(self.cell_areas.sum())

    @cached_property
    def interior_cells(self) -> np.ndarray:
        """Indices of all interior cells (including near-boundary ones)."""
        return np.flatnonzero(self.cell_class != CELL_BOUNDARY)

    @cached_property
    def boundary_cells(self) -> np.ndarray:
        return np.flatnonzero(self.cell_class == CELL_BOUNDARY)

    @cached_property
    def near_boundary_cells(self) -> np.ndarray:
        """Interior cells that share an edge with a boundary cell."""
        return np.flatnonzero(self.cell_class == CELL_NEAR_BOUNDARY)

    @cached_property
    def inner_cells(self) -> np.ndarray:
        """Interior cells with no boundary-cell neighbor."""
        return np.flatnonzero(self.cell_class == CELL_INTERIOR)

    @cached_property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_class == EDGE_INTERIOR)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_class == EDGE_BOUNDARY)

    def edges_on_cell(self, i: int) -> np.ndarray:
        return self.cell_edge_indices[self.cell_edge_offsets[i] : self.cell_edge_offsets[i + 1]]

    def vertices_on_cell(self, i: int) -> np.ndarray:
        return self.cell_vertex_indices[
            self.cell_vertex_offsets[i] : self.cell_vertex_offsets[i + 1]
        ]

    def cells_on_vertex(self, v: int) -> np.ndarray:
        return self.vertex_cell_indices[
            self.vertex_cell_offsets[v] : self.vertex_cell_offsets[v + 1]
        ]

    def edges_on_vertex(self, v: int) -> np.ndarray:
        return self.vertex_edge_indices[
            self.vertex_edge_offsets[v] : self.vertex_edge_offsets[v + 1]
        ]

    def kite_area(self, i: int, v: int) -> float:
        """Area of the overlap region between cell ``i`` and vertex ``v``."""
        lo, hi = self.cell_vertex_offsets[i], self.cell_vertex_offsets[i + 1]
        for k in range(lo, hi):
            if self.cell_vertex_indices[k] == v:
                return float(self.cell_kite_areas[k])
        raise KeyError(f"cell {i} and vertex {v} are not incident")


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate_mesh`.

    ``min_edge_length_ratio`` / ``max_edge_length_ratio`` bound all ``l_e``
    and ``d_e`` relative to ``reference_length`` (the mean of ``d_e``), the
    quasi-uniformity measure.  ``offending`` lists ``(kind, index)`` pairs
    for elements that failed a structural check.  ``accepted`` requires the
    Euler relation, zero non-convex diamonds, orthogonality deviation below
    ``orthogonality_tol`` and an empty ``offending`` list.
    """

    euler_ok: bool
    max_orthogonality_deviation: float
    max_bisection_offset_ratio: float
    min_edge_length_ratio: float
    max_edge_length_ratio: float
    reference_length: float
    nonconvex_diamond_count: int
    offending: tuple[tuple[str, int], ...]
    orthogonality_tol: float
    accepted: bool

    def __str__(self) -> str:
        lines = [
            f"euler_ok: {self.euler_ok}",
            f"max_orthogonality_deviation: {self.max_orthogonality_deviation:.3e} rad"
            f" (tol {self.orthogonality_tol:.1e})",
            f"max_bisection_offset_ratio: {self.max_bisection_offset_ratio:.3e}",
            f"edge_length_ratio: [{self.min_edge_length_ratio:.4f},"
            f" {self.max_edge_length_ratio:.4f}] of h = {self.reference_length:.6g} m",
            f"nonconvex_diamonds: {self.nonconvex_diamond_count}",
            f"offending: {list(self.offending) if self.offending else 'none'}",
            f"accepted: {self.accepted}",
        ]
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# assembly helpers shared by the builders and the loader


def _adjacency(owners: np.ndarray, count: int, *payloads: np.ndarray):
    """Group ``payloads`` by ``owners`` into compressed (offsets, ...) form."""
    owners = np.asarray(owners, dtype=np.int64)
    order = np.argsort(owners, kind="stable")
    counts = np.bincount(owners, minlength=count)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return (offsets,) + tuple(np.ascontiguousarray(p[order]) for p in payloads)


def _finalize_mesh(
    cell_centers: np.ndarray,
    vertex_positions: np.ndarray,
    cell_areas: np.ndarray,
    vertex_areas: np.ndarray,
    d_e: np.ndarray,
    l_e: np.ndarray,
    normal: np.ndarray,
    cells_on_edge: np.ndarray,
    vertices_on_edge: np.ndarray,
    boundary_cell_mask: np.ndarray,
    kite_cells: np.ndarray,
    kite_vertices: np.ndarray,
    kite_values: np.ndarray,
) -> PrimalDualMesh:
    """Derive signs, classes and adjacency tables, and freeze the mesh.

    The loader and both builders funnel through here so that derived fields
    are reproduced bit-for-bit on a save/load round trip.
    """
    cell_centers = np.ascontiguousarray(cell_centers, dtype=np.float64)
    vertex_positions = np.ascontiguousarray(vertex_positions, dtype=np.float64)
    cell_areas = np.ascontiguousarray(cell_areas, dtype=np.float64)
    vertex_areas = np.ascontiguousarray(vertex_areas, dtype=np.float64)
    d_e = np.ascontiguousarray(d_e, dtype=np.float64)
    l_e = np.ascontiguousarray(l_e, dtype=np.float64)
    normal = np.ascontiguousarray(normal, dtype=np.float64)
    cells_on_edge = np.ascontiguousarray(cells_on_edge, dtype=np.int64)
    vertices_on_edge = np.ascontiguousarray(vertices_on_edge, dtype=np.int64)

    n_cells = cell_centers.shape[0]
    n_vertices = vertex_positions.shape[0]
    n_edges = d_e.shape[0]
    if np.any(cells_on_edge[:, 0] < 0) or np.any(cells_on_edge >= n_cells):
        raise MeshError("cell index out of range in edge table")
    if np.any(vertices_on_edge >= n_vertices) or np.any(vertices_on_edge[:, 0] < 0):
        raise MeshError("vertex index out of range in edge table")
    if np.any(d_e <= 0) or np.any(l_e <= 0):
        raise MeshError("non-positive edge length")

    has_cell2 = cells_on_edge[:, 1] >= 0
    n_sign = np.zeros((n_edges, 2), dtype=np.float64)
    n_sign[:, 0] = 1.0
    n_sign[has_cell2, 1] = -1.0
    # the stored normal must point from the first cell toward the second
    seg = cell_centers[cells_on_edge[:, 1]] - cell_centers[cells_on_edge[:, 0]]
    if np.any(np.einsum("ij,ij->i", seg[has_cell2], normal[has_cell2]) <= 0.0):
        raise MeshError("edge normal does not point from the first to the second cell")

    edge_class = np.where(vertices_on_edge[:, 1] >= 0, EDGE_INTERIOR, EDGE_BOUNDARY)
    edge_class = edge_class.astype(np.int8)

    # facet tangent t_e = k x n_e; t_sign[e,k] = +1 where t_e points away
    # from vertex k along the facet
    tangent = np.stack([-normal[:, 1], normal[:, 0]], axis=1)
    midpoint = 0.5 * (
        cell_centers[cells_on_edge[:, 0]] + cell_centers[np.abs(cells_on_edge[:, 1])]
    )
    t_sign = np.zeros((n_edges, 2), dtype=np.float64)
    for slot in (0, 1):
        present = vertices_on_edge[:, slot] >= 0
        vpos = vertex_positions[vertices_on_edge[present, slot]]
        other_idx = vertices_on_edge[present, 1 - slot]
        other = np.where(
            (other_idx >= 0)[:, None],
            vertex_positions[np.abs(other_idx)],
            midpoint[present],
        )
        proj = np.einsum("ij,ij->i", tangent[present], other - vpos)
        if np.any(proj == 0.0):
            raise MeshError("degenerate facet: vertex coincides with the facet midpoint")
        t_sign[present, slot] = np.sign(proj)

    edge_diamond_areas = 0.5 * d_e * l_e

    # cell classes: boundary from the mask, near-boundary by edge adjacency
    cell_class = np.zeros(n_cells, dtype=np.int8)
    cell_class[boundary_cell_mask] = CELL_BOUNDARY
    c0, c1 = cells_on_edge[has_cell2, 0], cells_on_edge[has_cell2, 1]
    b0 = boundary_cell_mask[c0]
    b1 = boundary_cell_mask[c1]
    near = np.concatenate([c0[~b0 & b1], c1[b0 & ~b1]])
    cell_class[near] = CELL_NEAR_BOUNDARY

    # compressed adjacency tables
    edge_ids = np.arange(n_edges, dtype=np.int64)
    ce_owner = np.concatenate([cells_on_edge[:, 0], cells_on_edge[has_cell2, 1]])
    ce_edge = np.concatenate([edge_ids, edge_ids[has_cell2]])
    ce_sign = np.concatenate([n_sign[:, 0], n_sign[has_cell2, 1]])
    cell_edge_offsets, cell_edge_indices, cell_edge_signs = _adjacency(
        ce_owner, n_cells, ce_edge, ce_sign
    )

    ve_mask0 = vertices_on_edge[:, 0] >= 0
    ve_mask1 = vertices_on_edge[:, 1] >= 0
    ve_owner = np.concatenate([vertices_on_edge[ve_mask0, 0], vertices_on_edge[ve_mask1, 1]])
    ve_edge = np.concatenate([edge_ids[ve_mask0], edge_ids[ve_mask1]])
    ve_sign = np.concatenate([t_sign[ve_mask0, 0], t_sign[ve_mask1, 1]])
    vertex_edge_offsets, vertex_edge_indices, vertex_edge_signs = _adjacency(
        ve_owner, n_vertices, ve_edge, ve_sign
    )

    kite_cells = np.asarray(kite_cells, dtype=np.int64)
    kite_vertices = np.asarray(kite_vertices, dtype=np.int64)
    kite_values = np.asarray(kite_values, dtype=np.float64)
    if np.any(kite_cells < 0) or np.any(kite_cells >= n_cells):
        raise MeshError("cell index out of range in kite table")
    if np.any(kite_vertices < 0) or np.any(kite_vertices >= n_vertices):
        raise MeshError("vertex index out of range in kite table")
    cell_vertex_offsets, cell_vertex_indices, cell_kite_areas = _adjacency(
        kite_cells, n_cells, kite_vertices, kite_values
    )
    vertex_cell_offsets, vertex_cell_indices, vertex_kite_areas = _adjacency(
        kite_vertices, n_vertices, kite_cells, kite_values
    )

    if np.any(np.diff(cell_edge_offsets) == 0):
        raise MeshError("cell without edges")
    if np.any(np.diff(vertex_edge_offsets) == 0):
        raise MeshError("vertex without edges")
    if np.any(np.diff(vertex_cell_offsets) == 0):
        raise MeshError("vertex without kites")

    mesh = PrimalDualMesh(
        cell_centers=cell_centers,
        vertex_positions=vertex_positions,
        cell_areas=cell_areas,
        vertex_areas=vertex_areas,
        edge_diamond_areas=edge_diamond_areas,
        d_e=d_e,
        l_e=l_e,
        normal=normal,
        cells_on_edge=cells_on_edge,
        vertices_on_edge=vertices_on_edge,
        n_sign=n_sign,
        t_sign=t_sign,
        cell_class=cell_class,
        edge_class=edge_class,
        cell_edge_offsets=cell_edge_offsets,
        cell_edge_indices=cell_edge_indices,
        cell_edge_signs=cell_edge_signs,
        vertex_edge_offsets=vertex_edge_offsets,
        vertex_edge_indices=vertex_edge_indices,
        vertex_edge_signs=vertex_edge_signs,
        cell_vertex_offsets=cell_vertex_offsets,
        cell_vertex_indices=cell_vertex_indices,
        cell_kite_areas=cell_kite_areas,
        vertex_cell_offsets=vertex_cell_offsets,
        vertex_cell_indices=vertex_cell_indices,
        vertex_kite_areas=vertex_kite_areas,
    )
    for arr in vars(mesh).values():
        if isinstance(arr, np.ndarray):
            arr.setflags(write=False)
    return mesh


# ---------------------------------------------------------------------------
# structured quadrilateral meshes


def build_quad_mesh(nx: int, ny: int, Lx: float, Ly: float) -> PrimalDualMesh:
    """Build a structured quadrilateral mesh on the rectangle [0,Lx]x[0,Ly].

    Cell centers sit on the (nx+1) x (ny+1) lattice ``(i*Lx/nx, j*Ly/ny)``,
    so the rectangle boundary passes through the centers of the outermost
    cells, which become half (edge) and quarter (corner) rectangles.

    Parameters
    ----------
    nx, ny : int
        Number of center intervals per direction, at least 2.
    Lx, Ly : float
        Rectangle extents in meters, positive.
    """
    if not (isinstance(nx, (int, np.integer)) and isinstance(ny, (int, np.integer))):
        raise MeshError("nx and ny must be integers")
    if nx < 2 or ny < 2:
        raise MeshError(f"nx and ny must be at least 2, got ({nx}, {ny})")
    if not (math.isfinite(Lx) and math.isfinite(Ly)) or Lx <= 0 or Ly <= 0:
        raise MeshError(f"Lx and Ly must be positive, got ({Lx}, {Ly})")

    hx = Lx / nx
    hy = Ly / ny

    def cid(i: int, j: int) -> int:
        return j * (nx + 1) + i

    def vid(i: int, j: int) -> int:
        return j * nx + i

    ii, jj = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    ii = ii.ravel()
    jj = jj.ravel()
    cell_centers = np.column_stack([ii * hx, jj * hy]).astype(np.float64)
    wx = np.where((ii == 0) | (ii == nx), 0.5 * hx, hx)
    wy = np.where((jj == 0) | (jj == ny), 0.5 * hy, hy)
    cell_areas = wx * wy
    boundary_mask = (ii == 0) | (ii == nx) | (jj == 0) | (jj == ny)

    vi, vj = np.meshgrid(np.arange(nx), np.arange(ny))
    vi = vi.ravel()
    vj = vj.ravel()
    vertex_positions = np.column_stack([(vi + 0.5) * hx, (vj + 0.5) * hy]).astype(np.float64)
    vertex_areas = np.full(nx * ny, hx * hy, dtype=np.float64)

    ce, ve, dd, ll, nn = [], [], [], [], []
    # edges between horizontally adjacent centers (vertical facets)
    for j in range(ny + 1):
        for i in range(nx):
            ce.append((cid(i, j), cid(i + 1, j)))
            below = vid(i, j - 1) if j > 0 else -1
            above = vid(i, j) if j < ny else -1
            if below >= 0 and above >= 0:
                ve.append((below, above))
                ll.append(hy)
            else:
                ve.append((max(below, above), -1))
                ll.append(0.5 * hy)
            dd.append(hx)
            nn.append((1.0, 0.0))
    # edges between vertically adjacent centers (horizontal facets)
    for j in range(ny):
        for i in range(nx + 1):
            ce.append((cid(i, j), cid(i, j + 1)))
            left = vid(i - 1, j) if i > 0 else -1
            right = vid(i, j) if i < nx else -1
            if left >= 0 and right >= 0:
                ve.append((left, right))
                ll.append(hx)
            else:
                ve.append((max(left, right), -1))
                ll.append(0.5 * hx)
            dd.append(hy)
            nn.append((0.0, 1.0))

    # one kite per (cell, vertex) incidence, a quarter rectangle each
    kc, kv, ka = [], [], []
    kite = 0.25 * hx * hy
    for j in range(ny):
        for i in range(nx):
            v = vid(i, j)
            for ci, cj in ((i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)):
                kc.append(cid(ci, cj))
                kv.append(v)
                ka.append(kite)

    return _finalize_mesh(
        cell_centers,
        vertex_positions,
        cell_areas,
        vertex_areas,
        np.array(dd),
        np.array(ll),
        np.array(nn),
        np.array(ce, dtype=np.int64),
        np.array(ve, dtype=np.int64),
        boundary_mask,
        np.array(kc),
        np.array(kv),
        np.array(ka),
    )


# ---------------------------------------------------------------------------
# centroidal Voronoi meshes


def _as_polygon(domain) -> Polygon:
    if isinstance(domain, Polygon):
        poly = domain
    else:
        poly = Polygon(domain)
    if not poly.is_valid or poly.is_empty:
        raise MeshError("domain is not a valid simple polygon")
    if poly.interiors:
        raise MeshError("polygons with holes are not supported")
    return orient(poly, sign=1.0)  # counterclockwise exterior ring


def _boundary_generators(poly: Polygon, spacing: float) -> np.ndarray:
    """Equally spaced generators along each polygon side, corners pinned."""
    corners = np.asarray(poly.exterior.coords[:-1], dtype=np.float64)
    n_sides = corners.shape[0]
    side_vecs = np.roll(corners, -1, axis=0) - corners
    side_lens = np.hypot(side_vecs[:, 0], side_vecs[:, 1])
    counts = np.maximum(1, np.floor(side_lens / spacing + 0.5).astype(int))
    pts = []
    for s in range(n_sides):
        for k in range(counts[s]):
            pts.append(corners[s] + side_vecs[s] * (k / counts[s]))
    return np.asarray(pts, dtype=np.float64)


def _hex_lattice(poly: Polygon, spacing: float, margin: float) -> np.ndarray:
    """Triangular-lattice points inside the polygon, at least margin from
    the boundary."""
    minx, miny, maxx, maxy = poly.bounds
    prepared = prep(poly)
    boundary = poly.exterior
    pts = []
    row = 0
    y = miny + margin
    while y <= maxy - margin + 1e-12 * spacing:
        x = minx + margin + (0.5 * spacing if row % 2 else 0.0)
        while x <= maxx - margin + 1e-12 * spacing:
            p = Point(x, y)
            if prepared.contains(p) and boundary.distance(p) >= margin * (1 - 1e-12):
                pts.append((x, y))
            x += spacing
        y += spacing * math.sqrt(3.0) / 2.0
        row += 1
    return np.asarray(pts, dtype=np.float64).reshape(-1, 2)


_LATTICE_MARGIN = 0.55  # first lattice row offset from the wall, in spacings


def _pick_spacing(poly: Polygon, n_generators: int) -> float:
    """Bisect the lattice spacing until boundary plus lattice counts fill
    the generator budget.

    A common spacing for the wall rows and the interior lattice keeps the
    seeded density near its relaxed equilibrium, which is what makes the
    final triangulation acute almost everywhere.
    """
    base = math.sqrt(poly.area / n_generators)
    lo, hi = 0.3 * base, 3.0 * base

    def count(a: float) -> int:
        return len(_boundary_generators(poly, a)) + len(
            _hex_lattice(poly, a, _LATTICE_MARGIN * a)
        )

    if count(lo) < n_generators:
        raise MeshGenerationError(
            f"cannot fit {n_generators} generators: polygon too thin for the budget"
        )
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if count(mid) > n_generators:
            lo = mid
        else:
            hi = mid
    return hi  # largest probed spacing with count <= budget


def _seed_interior(
    poly: Polygon, count: int, spacing: float, rng: np.random.Generator
) -> np.ndarray:
    """Jittered lattice seeds, trimmed or topped up to the exact count."""
    prepared = prep(poly)
    boundary = poly.exterior
    pts = _hex_lattice(poly, spacing, _LATTICE_MARGIN * spacing)
    pts = pts + rng.normal(scale=0.05 * spacing, size=pts.shape)
    keep = [
        p
        for p in pts
        if prepared.contains(Point(p)) and boundary.distance(Point(p)) > 0.3 * spacing
    ]
    pts = np.asarray(keep, dtype=np.float64).reshape(-1, 2)
    if len(pts) > count:
        pts = pts[np.sort(rng.permutation(len(pts))[:count])]
    minx, miny, maxx, maxy = poly.bounds
    attempts = 0
    while len(pts) < count:
        attempts += 1
        if attempts > 10000 * count:
            raise MeshGenerationError("interior seeding failed: polygon too thin?")
        x = rng.uniform(minx, maxx)
        y = rng.uniform(miny, maxy)
        p = Point(x, y)
        if prepared.contains(p) and boundary.distance(p) > 0.5 * spacing:
            pts = np.vstack([pts, [x, y]])
    return pts


def _lloyd_iterate(
    poly: Polygon, boundary_pts: np.ndarray, interior_pts: np.ndarray, iterations: int
) -> np.ndarray:
    """Relax interior generators to their clipped-region centroids.

    Boundary generators stay fixed: equal spacing along straight sides is
    already their one-dimensional equilibrium.  Distant ghost generators
    keep every real region finite so it can be clipped directly.
    """
    if interior_pts.shape[0] == 0 or iterations == 0:
        return interior_pts
    minx, miny, maxx, maxy = poly.bounds
    span = max(maxx - minx, maxy - miny)
    gx = [minx - 10 * span, maxx + 10 * span]
    gy = [miny - 10 * span, maxy + 10 * span]
    ghosts = np.array([(x, y) for x in gx for y in gy])
    n_b = boundary_pts.shape[0]
    n_i = interior_pts.shape[0]
    pts = interior_pts.copy()
    for _ in range(iterations):
        allpts = np.vstack([boundary_pts, pts, ghosts])
        vor = Voronoi(allpts)
        for k in range(n_i):
            region = vor.regions[vor.point_region[n_b + k]]
            if -1 in region or len(region) < 3:
                continue  # touched by a ghost; leave in place
            cellpoly = Polygon(vor.vertices[region])
            clipped = cellpoly.intersection(poly)
            if clipped.is_empty or clipped.geom_type != "Polygon":
                continue
            c = clipped.centroid
            if poly.contains(c):
                pts[k, 0] = c.x
                pts[k, 1] = c.y
    return pts


def _find_darts(poly: Polygon, points: np.ndarray, n_boundary: int) -> list:
    """Locate interior Delaunay edges whose dual facet crosses or grazes
    the primal segment.

    Returns ``(i, j, apexes)`` per bad edge, where ``apexes`` lists the
    triangle apexes whose circumcenters ended up on the wrong side or on
    the segment line.  Zero darts means every kept triangle is acute or
    right relative to its neighbors, which is what diamond convexity
    requires.
    """
    tri = Delaunay(points)
    prepared = prep(poly)
    centroids = points[tri.simplices].mean(axis=1)
    keep = np.fromiter(
        (prepared.contains(Point(c)) for c in centroids), dtype=bool, count=len(centroids)
    )
    triangles = tri.simplices[keep]
    sides: dict = {}
    for tp in triangles:
        for k in range(3):
            key = (min(tp[k], tp[(k + 1) % 3]), max(tp[k], tp[(k + 1) % 3]))
            sides.setdefault(key, []).append(int(tp[(k + 2) % 3]))
    darts = []
    for (i, j), apexes in sides.items():
        if len(apexes) != 2:
            continue
        mid = 0.5 * (points[i] + points[j])
        r2 = 0.25 * float(np.sum((points[j] - points[i]) ** 2))
        # an apex strictly inside the circle over its opposite edge has an
        # obtuse angle there, which puts that triangle's circumcenter across
        # the primal segment; right angles (apex on the circle) are valid
        # degenerate diamonds and are left alone
        bad = [
            x for x in apexes if float(np.sum((points[x] - mid) ** 2)) < r2 * (1.0 - 1e-10)
        ]
        if bad:
            darts.append((i, j, apexes, bad))
    return darts


def _slide_wall_point(pts, apex, n_boundary, mid, r):
    """Slide a non-corner boundary generator along its wall out of a circle.

    The wall direction is inferred from the ring neighbours; a corner point
    (non-collinear neighbours) is pinned and never moved.  Returns True when
    the point was moved while preserving ring order with a safety gap.
    """
    prev = pts[(apex - 1) % n_boundary]
    nxt = pts[(apex + 1) % n_boundary]
    c = pts[apex]
    a = c - prev
    b = nxt - c
    span = math.hypot(*(nxt - prev))
    if span <= 0 or abs(a[0] * b[1] - a[1] * b[0]) > 1e-9 * span * span:
        return False
    w = (nxt - prev) / span
    # roots of |c + t*w - mid|^2 = r^2: intersections with the violating circle
    cm = c - mid
    half_b = cm[0] * w[0] + cm[1] * w[1]
    disc = half_b * half_b - (cm[0] ** 2 + cm[1] ** 2 - r * r)
    if disc <= 0:
        return False
    root = math.sqrt(disc)
    t_minus = -half_b - root
    t_plus = -half_b + root
    near_first = -t_minus < t_plus
    gap = 0.3 * min(math.hypot(*a), math.hypot(*b))
    for t_exit in ((t_minus, t_plus) if near_first else (t_plus, t_minus)):
        cand = c + 1.15 * t_exit * w
        da = cand - prev
        db = nxt - cand
        if (da[0] * w[0] + da[1] * w[1] > gap
                and db[0] * w[0] + db[1] * w[1] > gap):
            pts[apex] = cand
            return True
    return False


def _repair_darts(
    poly: Polygon,
    points: np.ndarray,
    n_boundary: int,
    spacing: float,
    rng: np.random.Generator,
    max_rounds: int = 120,
) -> np.ndarray:
    """Nudge generators until every diamond is strictly convex.

    An interior apex that fell inside the circle over its opposite edge is
    pushed radially out of it; when the apex sits on the wall (or the push
    would leave the domain) the edge endpoints are pushed away from the
    apex instead, which moves the circle off it.  Moves are local and a few
    percent of the spacing, so the centroidal layout survives.  Push
    magnitudes are drawn from ``rng`` to break repair cycles.
    """
    prepared = prep(poly)
    boundary = poly.exterior
    pts = points.copy()
    stall = 0
    best_count = None
    for _ in range(max_rounds):
        darts = _find_darts(poly, pts, n_boundary)
        if not darts:
            return pts
        if best_count is None or len(darts) < best_count:
            best_count = len(darts)
            stall = 0
        else:
            stall += 1
        if stall >= 8:
            # cycling: scatter the neighborhoods of the surviving darts
            stall = 0
            best_count = None
            involved = {k for i, j, apexes, bad in darts for k in (i, j, *apexes)}
            anchor = pts[sorted(involved)]
            near = np.flatnonzero(
                (np.abs(pts[:, None, :] - anchor[None, :, :]).max(axis=2) < 1.6 * spacing)
                .any(axis=1)
            )
            for k in near:
                if k < n_boundary:
                    continue
                for _try in range(8):
                    cand = pts[k] + rng.normal(scale=0.12 * spacing, size=2)
                    cp = Point(cand)
                    if prepared.contains(cp) and boundary.distance(cp) > 0.1 * spacing:
                        pts[k] = cand
                        break
            continue
        for i, j, apexes, bad in darts:
            for apex in bad:
                mid = 0.5 * (pts[i] + pts[j])
                r = 0.5 * math.dist(pts[i], pts[j])
                v = pts[apex] - mid
                dist = math.hypot(v[0], v[1])
                moved = False
                if apex >= n_boundary and dist > 0:
                    target = mid + v / dist * r * (1.04 + 0.08 * rng.random())
                    tp = Point(target)
                    if prepared.contains(tp) and boundary.distance(tp) > 0.05 * spacing:
                        pts[apex] = target
                        moved = True
                if not moved and 0 < apex < n_boundary:
                    moved = _slide_wall_point(pts, apex, n_boundary, mid, r)
                if not moved:
                    # push the edge endpoints away from the apex
                    depth = max(r - dist, 0.0) + 0.03 * r
                    if dist > 0:
                        away = v / dist
                    else:
                        away = np.array([1.0, 0.0])
                    shove = (1.1 + 0.5 * rng.random()) * depth
                    for q in (i, j):
                        if q >= n_boundary:
                            target = pts[q] - away * shove
                            tp = Point(target)
                            if prepared.contains(tp) and boundary.distance(tp) > 0.05 * spacing:
                                pts[q] = target
                                moved = True
                if not moved:
                    # everything pinned to the wall (an obtuse polygon
                    # corner): pull the opposite apex toward the edge until
                    # the triangulation flips the diagonal onto the corner
                    for other in apexes:
                        if other != apex and other >= n_boundary:
                            target = pts[other] + 0.12 * (mid - pts[other])
                            tp = Point(target)
                            if (
                                prepared.contains(tp)
                                and boundary.distance(tp) > 0.05 * spacing
                            ):
                                pts[other] = target
    raise MeshGenerationError(
        f"diamond convexity repair did not converge within {max_rounds} rounds"
    )


def _circumcenters(points: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = points[triangles[:, 0]]
    u = points[triangles[:, 1]] - a
    v = points[triangles[:, 2]] - a
    cross = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
    scale = np.maximum(np.abs(u).max(axis=1), np.abs(v).max(axis=1))
    if np.any(np.abs(cross) <= 1e-14 * scale * scale):
        raise MeshGenerationError("degenerate (near-collinear) triangle")
    uu = np.einsum("ij,ij->i", u, u)
    vv = np.einsum("ij,ij->i", v, v)
    d = 2.0 * cross
    cx = a[:, 0] + (v[:, 1] * uu - u[:, 1] * vv) / d
    cy = a[:, 1] + (u[:, 0] * vv - v[:, 0] * uu) / d
    return np.column_stack([cx, cy])


def _try_build_from_generators(
    poly: Polygon, points: np.ndarray, n_boundary: int
) -> PrimalDualMesh:
    n_pts = points.shape[0]
    # duplicated generators make qhull merge sites silently; reject first
    order = np.lexsort((points[:, 1], points[:, 0]))
    sorted_pts = points[order]
    gap = np.abs(np.diff(sorted_pts, axis=0)).max(axis=1)
    scale = max(poly.bounds[2] - poly.bounds[0], poly.bounds[3] - poly.bounds[1])
    if n_pts > 1 and gap.min() < 1e-12 * scale:
        raise MeshGenerationError("coincident generators")

    tri = Delaunay(points)
    prepared = prep(poly)
    centroids = points[tri.simplices].mean(axis=1)
    keep = np.fromiter(
        (prepared.contains(Point(c)) for c in centroids), dtype=bool, count=len(centroids)
    )
    triangles = tri.simplices[keep]
    if triangles.shape[0] == 0:
        raise MeshGenerationError("no triangles inside the domain")

    # orient all triangles counterclockwise
    a, b, c = points[triangles[:, 0]], points[triangles[:, 1]], points[triangles[:, 2]]
    cw = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = cw < 0
    triangles[flip, 1], triangles[flip, 2] = triangles[flip, 2], triangles[flip, 1]

    vertex_positions = _circumcenters(points, triangles)

    # gather unique generator pairs; a pair on one kept triangle must be a
    # consecutive boundary pair, a pair on two is an interior edge
    sides: dict[tuple[int, int], list[int]] = {}
    for t, tri_pts in enumerate(triangles):
        for k in range(3):
            key = (tri_pts[k], tri_pts[(k + 1) % 3])
            key = (min(key), max(key))
            sides.setdefault(key, []).append(t)

    ring_pairs = {
        (min(i, (i + 1) % n_boundary), max(i, (i + 1) % n_boundary))
        for i in range(n_boundary)
    } if n_boundary >= 3 else set()

    single = {pair for pair, ts in sides.items() if len(ts) == 1}
    if single != ring_pairs:
        raise MeshGenerationError(
            "triangulation does not conform to the boundary "
            f"({len(single ^ ring_pairs)} mismatched sides)"
        )
    if any(len(ts) > 2 for ts in sides.values()):
        raise MeshGenerationError("generator pair shared by more than two triangles")

    pair_list = sorted(sides.keys())
    ce = np.array(pair_list, dtype=np.int64)
    n_edges = ce.shape[0]
    ve = np.full((n_edges, 2), -1, dtype=np.int64)
    for e, pair in enumerate(pair_list):
        ts = sides[pair]
        ve[e, 0] = ts[0]
        if len(ts) == 2:
            ve[e, 1] = ts[1]

    seg = points[ce[:, 1]] - points[ce[:, 0]]
    d_e = np.hypot(seg[:, 0], seg[:, 1])
    normal = seg / d_e[:, None]

    midpts = 0.5 * (points[ce[:, 0]] + points[ce[:, 1]])
    interior = ve[:, 1] >= 0
    facet = vertex_positions[ve[:, 0]] - np.where(
        interior[:, None], vertex_positions[np.abs(ve[:, 1])], midpts
    )
    l_e = np.hypot(facet[:, 0], facet[:, 1])
    if np.any(l_e <= 1e-12 * d_e):
        raise MeshGenerationError("degenerate facet (near-cocircular generators)")
    # on boundary edges the single circumcenter must lie inside the domain,
    # on the left of the counterclockwise boundary segment
    for e in np.flatnonzero(~interior):
        i, j = ce[e]
        # ring order: lower index first except for the closing pair
        if (i + 1) % n_boundary != j and (j + 1) % n_boundary != i:
            raise MeshGenerationError("boundary edge between non-adjacent ring generators")
        fwd = points[j] - points[i] if (i + 1) % n_boundary == j else points[i] - points[j]
        inward = np.array([-fwd[1], fwd[0]])
        if np.dot(vertex_positions[ve[e, 0]] - midpts[e], inward) <= 1e-12 * d_e[e] ** 2:
            raise MeshGenerationError("boundary triangle circumcenter outside the domain")

    # kites: one per (triangle corner); quad generator -> side midpoint ->
    # circumcenter -> other side midpoint, signed shoelace area
    tri_area = 0.5 * np.abs(
        (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    )
    kc = np.empty(3 * triangles.shape[0], dtype=np.int64)
    kv = np.empty_like(kc)
    ka = np.empty(3 * triangles.shape[0], dtype=np.float64)
    for k in range(3):
        g = points[triangles[:, k]]
        m1 = 0.5 * (g + points[triangles[:, (k + 1) % 3]])
        m2 = 0.5 * (g + points[triangles[:, (k + 2) % 3]])
        vv = vertex_positions
        # shoelace of (g, m1, vv, m2)
        area = 0.5 * (
            g[:, 0] * (m1[:, 1] - m2[:, 1])
            + m1[:, 0] * (vv[:, 1] - g[:, 1])
            + vv[:, 0] * (m2[:, 1] - m1[:, 1])
            + m2[:, 0] * (g[:, 1] - vv[:, 1])
        )
        kc[k::3] = triangles[:, k]
        kv[k::3] = np.arange(triangles.shape[0])
        ka[k::3] = area

    cell_areas = np.zeros(n_pts)
    np.add.at(cell_areas, kc, ka)
    if np.any(cell_areas <= 0):
        raise MeshGenerationError("non-positive cell area")

    boundary_mask = np.zeros(n_pts, dtype=bool)
    boundary_mask[:n_boundary] = True

    return _finalize_mesh(
        points,
        vertex_positions,
        cell_areas,
        tri_area,
        d_e,
        l_e,
        normal,
        ce,
        ve,
        boundary_mask,
        kc,
        kv,
        ka,
    )


def _mesh_from_generators(
    poly: Polygon,
    points: np.ndarray,
    n_boundary: int,
    rng: np.random.Generator,
    retry_cap: int = 5,
) -> PrimalDualMesh:
    """Build a mesh from explicit generators, perturbing on degeneracy.

    Only generators at index ``n_boundary`` and beyond (the interior ones)
    are perturbed; boundary generators would lose conformity.  When there
    are no boundary generators at all, every generator is fair game.
    """
    scale = max(poly.bounds[2] - poly.bounds[0], poly.bounds[3] - poly.bounds[1])
    pts = np.array(points, dtype=np.float64)
    last_error: Exception | None = None
    for attempt in range(retry_cap + 1):
        try:
            return _try_build_from_generators(poly, pts, n_boundary)
        except (QhullError, MeshGenerationError) as exc:
            last_error = exc
            logger.debug("mesh build attempt %d failed: %s", attempt + 1, exc)
            jitter = rng.normal(scale=1e-9 * scale, size=pts[n_boundary:].shape)
            pts[n_boundary:] += jitter
    raise MeshGenerationError(
        f"mesh generation failed after {retry_cap + 1} attempts: {last_error}"
    )


def build_cvt_mesh(
    domain,
    n_generators: int,
    lloyd_iterations: int,
    rng_seed: int,
    *,
    retry_cap: int = 5,
) -> PrimalDualMesh:
    """Build a centroidal-Voronoi-tessellation mesh of a simple polygon.

    Generators are split between equally spaced boundary points (corners
    pinned) and interior points relaxed by Lloyd iteration under uniform
    density.  The result is deterministic for a fixed
    ``(domain, n_generators, lloyd_iterations, rng_seed)``.

    Parameters
    ----------
    domain : shapely Polygon or coordinate sequence
        Simple polygon without holes.
    n_generators : int
        Total generator budget, at least 10.
    lloyd_iterations : int
        Number of Lloyd relaxation sweeps for the interior generators.
    rng_seed : int
        Seed for initial interior placement and degeneracy perturbations.

    Raises
    ------
    MeshGenerationError
        If the generator set stays degenerate after the retry cap, or the
        finished mesh fails validation at CVT tolerances.
    """
    poly = _as_polygon(domain)
    if n_generators < 10:
        raise MeshError(f"n_generators must be at least 10, got {n_generators}")
    if lloyd_iterations < 0:
        raise MeshError("lloyd_iterations must be non-negative")

    rng = np.random.default_rng(rng_seed)
    spacing = _pick_spacing(poly, n_generators)
    boundary_pts = _boundary_generators(poly, spacing)
    n_b = boundary_pts.shape[0]
    n_i = n_generators - n_b
    if n_i < 1:
        raise MeshError(
            f"generator budget {n_generators} leaves no interior generators "
            f"({n_b} needed on the boundary)"
        )

    last_error: Exception | None = None
    interior_pts = _seed_interior(poly, n_i, spacing, rng)
    for attempt in range(retry_cap + 1):
        try:
            relaxed = _lloyd_iterate(poly, boundary_pts, interior_pts, lloyd_iterations)
            repaired = _repair_darts(
                poly, np.vstack([boundary_pts, relaxed]), n_b, spacing, rng
            )
            mesh = _mesh_from_generators(poly, repaired, n_b, rng, retry_cap=retry_cap)
            report = validate_mesh(mesh, orthogonality_tol=CVT_ORTHOGONALITY_TOL)
            if report.accepted:
                return mesh
            last_error = MeshGenerationError(f"mesh failed validation:\n{report}")
        except (QhullError, MeshGenerationError) as exc:
            last_error = exc
        logger.debug("cvt attempt %d rejected: %s", attempt + 1, last_error)
        # reshuffle the interior slightly and relax again
        interior_pts = interior_pts + rng.normal(
            scale=0.05 * spacing, size=interior_pts.shape
        )
    raise MeshGenerationError(
        f"cvt mesh generation failed after {retry_cap + 1} attempts: {last_error}"
    )


# ---------------------------------------------------------------------------
# validation


def validate_mesh(
    mesh: PrimalDualMesh, orthogonality_tol: float = STRUCTURED_ORTHOGONALITY_TOL
) -> ValidationReport:
    """Check structural and geometric invariants; never raises.

    Structured meshes should be validated with the default tolerance,
    CVT meshes with :data:`CVT_ORTHOGONALITY_TOL`.
    """
    offending: list[tuple[str, int]] = []

    euler_ok = mesh.n_cells + mesh.n_vertices == mesh.n_edges + 1

    has_cell2 = mesh.cells_on_edge[:, 1] >= 0
    for e in np.flatnonzero(~has_cell2):
        offending.append(("edge", int(e)))  # single-cell edge: not conforming

    # direction indicators: exactly {+1,-1} summing to zero per edge
    sign_bad = (np.abs(mesh.n_sign[has_cell2]).min(axis=1) != 1.0) | (
        mesh.n_sign[has_cell2].sum(axis=1) != 0.0
    )
    for e in np.flatnonzero(has_cell2)[sign_bad]:
        offending.append(("edge", int(e)))

    # unit normals and diamond area identity |A_e| = d_e * l_e / 2
    norm2 = np.einsum("ij,ij->i", mesh.normal, mesh.normal)
    area_bad = np.abs(mesh.edge_diamond_areas - 0.5 * mesh.d_e * mesh.l_e) > (
        1e-15 * mesh.edge_diamond_areas
    )
    for e in np.flatnonzero((np.abs(norm2 - 1.0) > 1e-12) | area_bad):
        offending.append(("edge", int(e)))

    # boundary edges carry exactly one vertex, interior edges two
    expect_two = mesh.edge_class == EDGE_INTERIOR
    has_v2 = mesh.vertices_on_edge[:, 1] >= 0
    for e in np.flatnonzero(expect_two != has_v2):
        offending.append(("edge", int(e)))

    # facet geometry: orthogonality, bisection offset, convexity
    c0 = mesh.cell_centers[mesh.cells_on_edge[:, 0]]
    c1 = mesh.cell_centers[np.where(has_cell2, mesh.cells_on_edge[:, 1], mesh.cells_on_edge[:, 0])]
    midpoint = 0.5 * (c0 + c1)
    tangent = np.stack([-mesh.normal[:, 1], mesh.normal[:, 0]], axis=1)
    v0 = mesh.vertex_positions[mesh.vertices_on_edge[:, 0]]
    other = np.where(
        has_v2[:, None], mesh.vertex_positions[np.abs(mesh.vertices_on_edge[:, 1])], midpoint
    )
    facet = v0 - other
    flen = np.hypot(facet[:, 0], facet[:, 1])
    ok = (flen > 0) & has_cell2
    max_dev = 0.0
    if np.any(ok):
        sin_dev = np.abs(np.einsum("ij,ij->i", facet[ok], mesh.normal[ok])) / flen[ok]
        max_dev = float(np.arcsin(np.clip(sin_dev, 0.0, 1.0)).max())

    interior = has_v2 & has_cell2
    max_offset = 0.0
    if np.any(interior):
        fmid = 0.5 * (v0[interior] + mesh.vertex_positions[mesh.vertices_on_edge[interior, 1]])
        offset = np.abs(np.einsum("ij,ij->i", fmid - midpoint[interior], tangent[interior]))
        max_offset = float(offset.max())

    # non-convex diamonds: the two vertices of an interior edge must not
    # fall strictly on the same side of the center segment (a vertex ON the
    # segment is a valid degenerate diamond, like every boundary diamond,
    # and keeps all area identities and kite signs); a boundary vertex must
    # sit strictly off the segment line or the facet has no length
    seg = c1 - c0
    s0 = seg[:, 0] * (v0[:, 1] - c0[:, 1]) - seg[:, 1] * (v0[:, 0] - c0[:, 0])
    v1pos = mesh.vertex_positions[np.abs(mesh.vertices_on_edge[:, 1])]
    s1 = seg[:, 0] * (v1pos[:, 1] - c0[:, 1]) - seg[:, 1] * (v1pos[:, 0] - c0[:, 0])
    dd2 = mesh.d_e**2
    nonconvex = np.zeros(mesh.n_edges, dtype=bool)
    nonconvex[interior] = (s0[interior] * s1[interior] > 0.0) & (
        np.minimum(np.abs(s0[interior]), np.abs(s1[interior])) > 1e-9 * dd2[interior]
    )
    bdry = ~has_v2 & has_cell2
    nonconvex[bdry] = np.abs(s0[bdry]) <= 1e-9 * dd2[bdry]
    nonconvex_count = int(nonconvex.sum())
    for e in np.flatnonzero(nonconvex):
        offending.append(("edge", int(e)))

    # kite partitions: kites at a vertex tile the vertex cell, kites in a
    # cell tile the cell
    v_owner = np.repeat(np.arange(mesh.n_vertices), np.diff(mesh.vertex_cell_offsets))
    vertex_sums = np.bincount(v_owner, weights=mesh.vertex_kite_areas, minlength=mesh.n_vertices)
    vertex_scale = np.abs(mesh.vertex_areas)
    bad_v = np.abs(vertex_sums - mesh.vertex_areas) > _REL_TOL * np.maximum(
        vertex_scale, vertex_scale.max()
    )
    for v in np.flatnonzero(bad_v):
        offending.append(("vertex", int(v)))

    c_owner = np.repeat(np.arange(mesh.n_cells), np.diff(mesh.cell_vertex_offsets))
    cell_sums = np.bincount(c_owner, weights=mesh.cell_kite_areas, minlength=mesh.n_cells)
    cell_scale = np.abs(mesh.cell_areas)
    bad_c = np.abs(cell_sums - mesh.cell_areas) > _REL_TOL * np.maximum(
        cell_scale, cell_scale.max()
    )
    for i in np.flatnonzero(bad_c):
        offending.append(("cell", int(i)))

    # global area partitions
    total = mesh.cell_areas.sum()
    if abs(mesh.vertex_areas.sum() - total) > _REL_TOL * abs(total):
        offending.append(("mesh", -1))
    if abs(mesh.edge_diamond_areas.sum() - total) > _REL_TOL * abs(total):
        offending.append(("mesh", -2))

    h_ref = float(mesh.d_e.mean())
    lo = float(min(mesh.d_e.min(), mesh.l_e.min()) / h_ref)
    hi = float(max(mesh.d_e.max(), mesh.l_e.max()) / h_ref)

    seen = set()
    offending_unique = tuple(x for x in offending if not (x in seen or seen.add(x)))
    accepted = (
        euler_ok
        and nonconvex_count == 0
        and max_dev < orthogonality_tol
        and not offending_unique
    )
    return ValidationReport(
        euler_ok=euler_ok,
        max_orthogonality_deviation=max_dev,
        max_bisection_offset_ratio=max_offset / h_ref,
        min_edge_length_ratio=lo,
        max_edge_length_ratio=hi,
        reference_length=h_ref,
        nonconvex_diamond_count=nonconvex_count,
        offending=offending_unique,
        orthogonality_tol=orthogonality_tol,
        accepted=accepted,
    )


# ---------------------------------------------------------------------------
# qgmesh v1 serialization


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_mesh(mesh: PrimalDualMesh, path) -> None:
    """Write a mesh in the plain-text ``qgmesh 1`` format.

    Indices are 1-based in the file; ``-1`` marks an absent second cell or
    vertex on an edge row.  Reals carry 17 significant digits, enough to
    round-trip IEEE doubles exactly.
    """
    lines = ["qgmesh 1"]
    lines.append(f"cells {mesh.n_cells}")
    lines.append("# id x y area class")
    for i in range(mesh.n_cells):
        x, y = mesh.cell_centers[i]
        lines.append(
            f"{i + 1} {_fmt(x)} {_fmt(y)} {_fmt(mesh.cell_areas[i])}"
            f" {_CELL_TAGS[int(mesh.cell_class[i])]}"
        )
    lines.append(f"vertices {mesh.n_vertices}")
    lines.append("# id x y area")
    for v in range(mesh.n_vertices):
        x, y = mesh.vertex_positions[v]
        lines.append(f"{v + 1} {_fmt(x)} {_fmt(y)} {_fmt(mesh.vertex_areas[v])}")
    lines.append(f"edges {mesh.n_edges}")
    lines.append("# id d_e l_e nx ny cell1 cell2 vertex1 vertex2 class")
    for e in range(mesh.n_edges):
        cc = mesh.cells_on_edge[e]
        vv = mesh.vertices_on_edge[e]
        c2 = cc[1] + 1 if cc[1] >= 0 else -1
        v2 = vv[1] + 1 if vv[1] >= 0 else -1
        lines.append(
            f"{e + 1} {_fmt(mesh.d_e[e])} {_fmt(mesh.l_e[e])}"
            f" {_fmt(mesh.normal[e, 0])} {_fmt(mesh.normal[e, 1])}"
            f" {cc[0] + 1} {c2} {vv[0] + 1} {v2} {_EDGE_TAGS[int(mesh.edge_class[e])]}"
        )
    n_kites = len(mesh.cell_kite_areas)
    lines.append(f"kites {n_kites}")
    lines.append("# cell vertex area")
    for i in range(mesh.n_cells):
        lo, hi = mesh.cell_vertex_offsets[i], mesh.cell_vertex_offsets[i + 1]
        for k in range(lo, hi):
            lines.append(
                f"{i + 1} {mesh.cell_vertex_indices[k] + 1} {_fmt(mesh.cell_kite_areas[k])}"
            )
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


class _TokenReader:
    """Whitespace token stream over a qgmesh file, skipping # comments."""

    def __init__(self, path):
        with open(path, "r", encoding="ascii") as fh:
            raw = fh.read()
        tokens = []
        for line in raw.splitlines():
            body = line.split("#", 1)[0]
            tokens.extend(body.split())
        self._tokens = tokens
        self._pos = 0

    def next(self, context: str) -> str:
        if self._pos >= len(self._tokens):
            raise MeshFormatError(f"unexpected end of file while reading {context}")
        tok = self._tokens[self._pos]
        self._pos += 1
        return tok

    def next_int(self, context: str) -> int:
        tok = self.next(context)
        try:
            return int(tok)
        except ValueError:
            raise MeshFormatError(f"expected integer in {context}, got {tok!r}") from None

    def next_float(self, context: str) -> float:
        tok = self.next(context)
        try:
            return float(tok)
        except ValueError:
            raise MeshFormatError(f"expected real in {context}, got {tok!r}") from None

    def expect(self, literal: str, context: str) -> None:
        tok = self.next(context)
        if tok != literal:
            raise MeshFormatError(f"malformed {context}: expected {literal!r}, got {tok!r}")

    def at_end(self) -> bool:
        return self._pos >= len(self._tokens)


def load_mesh(path) -> PrimalDualMesh:
    """Read a ``qgmesh 1`` file and rebuild the full mesh.

    Raises :class:`MeshFormatError` on malformed headers, out-of-range
    indices, or section counts that violate the Euler relation.
    """
    r = _TokenReader(path)
    if r.at_end():
        raise MeshFormatError("empty mesh file")
    r.expect("qgmesh", "file header")
    r.expect("1", "file header version")

    r.expect("cells", "cells section header")
    n_cells = r.next_int("cells section header")
    if n_cells <= 0:
        raise MeshFormatError("cells section: count must be positive")
    cell_centers = np.empty((n_cells, 2))
    cell_areas = np.empty(n_cells)
    cell_class = np.empty(n_cells, dtype=np.int8)
    for i in range(n_cells):
        ident = r.next_int("cells section")
        if ident != i + 1:
            raise MeshFormatError(f"cells section: expected id {i + 1}, got {ident}")
        cell_centers[i, 0] = r.next_float("cells section")
        cell_centers[i, 1] = r.next_float("cells section")
        cell_areas[i] = r.next_float("cells section")
        tag = r.next("cells section")
        if tag not in _CELL_CODES:
            raise MeshFormatError(f"cells section: unknown class {tag!r}")
        cell_class[i] = _CELL_CODES[tag]

    r.expect("vertices", "vertices section header")
    n_vertices = r.next_int("vertices section header")
    if n_vertices <= 0:
        raise MeshFormatError("vertices section: count must be positive")
    vertex_positions = np.empty((n_vertices, 2))
    vertex_areas = np.empty(n_vertices)
    for v in range(n_vertices):
        ident = r.next_int("vertices section")
        if ident != v + 1:
            raise MeshFormatError(f"vertices section: expected id {v + 1}, got {ident}")
        vertex_positions[v, 0] = r.next_float("vertices section")
        vertex_positions[v, 1] = r.next_float("vertices section")
        vertex_areas[v] = r.next_float("vertices section")

    r.expect("edges", "edges section header")
    n_edges = r.next_int("edges section header")
    if n_edges <= 0:
        raise MeshFormatError("edges section: count must be positive")
    if n_cells + n_vertices != n_edges + 1:
        raise MeshFormatError(
            f"section counts violate the Euler relation: {n_cells} cells + "
            f"{n_vertices} vertices != {n_edges} edges + 1"
        )
    d_e = np.empty(n_edges)
    l_e = np.empty(n_edges)
    normal = np.empty((n_edges, 2))
    ce = np.empty((n_edges, 2), dtype=np.int64)
    ve = np.empty((n_edges, 2), dtype=np.int64)
    edge_class = np.empty(n_edges, dtype=np.int8)
    for e in range(n_edges):
        ident = r.next_int("edges section")
        if ident != e + 1:
            raise MeshFormatError(f"edges section: expected id {e + 1}, got {ident}")
        d_e[e] = r.next_float("edges section")
        l_e[e] = r.next_float("edges section")
        normal[e, 0] = r.next_float("edges section")
        normal[e, 1] = r.next_float("edges section")
        for slot in range(2):
            idx = r.next_int("edges section")
            if idx == -1:
                ce[e, slot] = -1
            elif 1 <= idx <= n_cells:
                ce[e, slot] = idx - 1
            else:
                raise MeshFormatError(f"edges section: cell index {idx} out of range")
        for slot in range(2):
            idx = r.next_int("edges section")
            if idx == -1:
                ve[e, slot] = -1
            elif 1 <= idx <= n_vertices:
                ve[e, slot] = idx - 1
            else:
                raise MeshFormatError(f"edges section: vertex index {idx} out of range")
        tag = r.next("edges section")
        if tag not in _EDGE_CODES:
            raise MeshFormatError(f"edges section: unknown class {tag!r}")
        edge_class[e] = _EDGE_CODES[tag]
        if (edge_class[e] == EDGE_BOUNDARY) != (ve[e, 1] == -1):
            raise MeshFormatError(
                f"edges section: edge {e + 1} class contradicts its vertex count"
            )
        if ce[e, 0] == -1:
            raise MeshFormatError(f"edges section: edge {e + 1} has no first cell")
        if ve[e, 0] == -1:
            raise MeshFormatError(f"edges section: edge {e + 1} has no vertex")

    r.expect("kites", "kites section header")
    n_kites = r.next_int("kites section header")
    if n_kites <= 0:
        raise MeshFormatError("kites section: count must be positive")
    kc = np.empty(n_kites, dtype=np.int64)
    kv = np.empty(n_kites, dtype=np.int64)
    ka = np.empty(n_kites)
    for k in range(n_kites):
        ci = r.next_int("kites section")
        vi = r.next_int("kites section")
        if not (1 <= ci <= n_cells):
            raise MeshFormatError(f"kites section: cell index {ci} out of range")
        if not (1 <= vi <= n_vertices):
            raise MeshFormatError(f"kites section: vertex index {vi} out of range")
        kc[k] = ci - 1
        kv[k] = vi - 1
        ka[k] = r.next_float("kites section")
    if not r.at_end():
        raise MeshFormatError("trailing tokens after the kites section")

    mesh = _finalize_mesh(
        cell_centers,
        vertex_positions,
        cell_areas,
        vertex_areas,
        d_e,
        l_e,
        normal,
        ce,
        ve,
        cell_class == CELL_BOUNDARY,
        kc,
        kv,
        ka,
    )
    if not np.array_equal(mesh.cell_class, cell_class):
        raise MeshFormatError("stored cell classes contradict the edge topology")
    if not np.array_equal(mesh.edge_class, edge_class):
        raise MeshFormatError("stored edge classes contradict the vertex counts")
    return mesh
