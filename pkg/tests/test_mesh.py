"""Mesh construction, validation, and qgmesh file round trips."""

import dataclasses

import numpy as np
import numpy.testing as npt
import pytest

from qgfv.errors import MeshError, MeshFormatError
from qgfv.mesh import (CVT_ORTHOGONALITY_TOL, build_cvt_mesh, build_quad_mesh,
                       load_mesh, save_mesh, validate_mesh)

from conftest import UNIT_SQUARE


# ---------------------------------------------------------------------------
# the 2x2-vertex unit square: every quantity is a small power of two


class TestQ2Geometry:
    def test_counts(self, q2):
        assert q2.n_cells == 9
        assert q2.n_vertices == 4
        assert q2.n_edges == 12
        assert q2.n_cells + q2.n_vertices == q2.n_edges + 1

    def test_cell_classes(self, q2):
        assert len(q2.boundary_cells) == 8
        assert len(q2.near_boundary_cells) == 1
        assert len(q2.inner_cells) == 0
        npt.assert_array_equal(q2.interior_cells, q2.near_boundary_cells)
        center = q2.interior_cells[0]
        npt.assert_array_equal(q2.cell_centers[center], [0.5, 0.5])

    def test_cell_areas(self, q2):
        assert q2.domain_area == 1.0
        assert sorted(set(q2.cell_areas.tolist())) == [0.0625, 0.125, 0.25]
        assert np.sum(q2.cell_areas == 0.0625) == 4  # corners
        assert np.sum(q2.cell_areas == 0.125) == 4   # wall midpoints
        assert np.sum(q2.cell_areas == 0.25) == 1    # center

    def test_edge_geometry(self, q2):
        assert len(q2.interior_edges) == 4
        assert len(q2.boundary_edges) == 8
        be = q2.boundary_edges
        npt.assert_array_equal(q2.l_e[be], 0.25)
        npt.assert_array_equal(q2.d_e[be], 0.5)
        npt.assert_array_equal(q2.edge_diamond_areas[be], 0.0625)
        ie = q2.interior_edges
        npt.assert_array_equal(q2.l_e[ie], 0.5)
        npt.assert_array_equal(q2.d_e[ie], 0.5)
        npt.assert_array_equal(q2.edge_diamond_areas[ie], 0.125)
        assert q2.edge_diamond_areas.sum() == 1.0

    def test_vertex_geometry(self, q2):
        npt.assert_array_equal(q2.vertex_areas, 0.25)
        npt.assert_array_equal(np.sort(q2.vertex_positions[:, 0]),
                               [0.25, 0.25, 0.75, 0.75])
        npt.assert_array_equal(q2.vertex_kite_areas, 0.0625)
        npt.assert_array_equal(q2.cell_kite_areas, 0.0625)
        assert len(q2.cell_kite_areas) == 16

    def test_adjacency(self, q2):
        center = int(q2.interior_cells[0])
        edges = q2.edges_on_cell(center)
        assert len(edges) == 4
        npt.assert_array_equal(q2.edge_class[edges], 0)
        assert len(q2.vertices_on_cell(center)) == 4
        for v in range(4):
            assert len(q2.cells_on_vertex(v)) == 4
            assert len(q2.edges_on_vertex(v)) == 4
            assert q2.kite_area(center, v) == 0.0625
        corner = int(np.flatnonzero(q2.cell_areas == 0.0625)[0])
        assert len(q2.vertices_on_cell(corner)) == 1
        missing = set(range(4)) - set(q2.vertices_on_cell(corner).tolist())
        with pytest.raises(KeyError):
            q2.kite_area(corner, missing.pop())

    def test_normal_points_first_to_second_cell(self, q2):
        c0 = q2.cell_centers[q2.cells_on_edge[:, 0]]
        c1 = q2.cell_centers[q2.cells_on_edge[:, 1]]
        along = np.einsum("ij,ij->i", c1 - c0, q2.normal)
        assert np.all(along > 0.0)
        npt.assert_array_equal(q2.n_sign[:, 0], 1.0)
        npt.assert_array_equal(q2.n_sign[:, 1], -1.0)

    def test_validation_clean(self, q2):
        report = validate_mesh(q2)
        assert report.accepted
        assert report.euler_ok
        assert report.max_orthogonality_deviation == 0.0
        assert report.nonconvex_diamond_count == 0
        assert report.offending == ()
        assert "accepted: True" in str(report)


class TestQuadMeshes:
    def test_counts_8x8(self, quad8):
        assert quad8.n_cells == 81
        assert quad8.n_vertices == 64
        assert quad8.n_edges == 144
        assert len(quad8.boundary_cells) == 32
        assert len(quad8.near_boundary_cells) == 24
        assert len(quad8.inner_cells) == 25
        assert len(quad8.boundary_edges) == 32
        assert len(quad8.interior_edges) == 112

    def test_rectangle_partitions(self):
        mesh = build_quad_mesh(4, 6, 2.0, 3.0)
        total = mesh.cell_areas.sum()
        assert abs(total - 6.0) <= 1e-12 * 6.0
        assert abs(mesh.vertex_areas.sum() - total) <= 1e-12 * total
        assert abs(mesh.edge_diamond_areas.sum() - total) <= 1e-12 * total
        npt.assert_array_equal(mesh.edge_diamond_areas,
                               0.5 * mesh.d_e * mesh.l_e)

    def test_rectangle_validates(self):
        report = validate_mesh(build_quad_mesh(4, 6, 2.0, 3.0))
        assert report.accepted
        assert report.max_bisection_offset_ratio <= 1e-12

    def test_kite_partitions(self, quad8):
        for i in range(quad8.n_cells):
            vids = quad8.vertices_on_cell(i)
            ksum = sum(quad8.kite_area(i, int(v)) for v in vids)
            assert abs(ksum - quad8.cell_areas[i]) <= 1e-12 * quad8.cell_areas[i]

    def test_builder_rejects_bad_arguments(self):
        with pytest.raises(MeshError):
            build_quad_mesh(2.5, 2, 1.0, 1.0)
        with pytest.raises(MeshError):
            build_quad_mesh(1, 4, 1.0, 1.0)
        with pytest.raises(MeshError):
            build_quad_mesh(4, 4, 0.0, 1.0)
        with pytest.raises(MeshError):
            build_quad_mesh(4, 4, 1.0, float("nan"))


# ---------------------------------------------------------------------------
# fault injection: validate_mesh must localize hand-made damage


def _tampered(mesh, **field_edits):
    changes = {}
    for name, edit in field_edits.items():
        arr = getattr(mesh, name).copy()
        edit(arr)
        arr.setflags(write=False)
        changes[name] = arr
    return dataclasses.replace(mesh, **changes)


class TestValidationFaults:
    def test_flipped_direction_indicator(self, q2):
        def flip(a):
            a[0, 1] = 1.0
        bad = _tampered(q2, n_sign=flip)
        report = validate_mesh(bad)
        assert not report.accepted
        assert ("edge", 0) in report.offending

    def test_non_unit_normal(self, q2):
        def stretch(a):
            a[3] *= 2.0
        report = validate_mesh(_tampered(q2, normal=stretch))
        assert not report.accepted
        assert ("edge", 3) in report.offending

    def test_broken_diamond_area(self, q2):
        def bump(a):
            a[5] += 1e-3
        report = validate_mesh(_tampered(q2, edge_diamond_areas=bump))
        assert not report.accepted
        assert ("edge", 5) in report.offending

    def test_broken_cell_area(self, q2):
        def bump(a):
            a[0] *= 2.0
        report = validate_mesh(_tampered(q2, cell_areas=bump))
        assert not report.accepted
        assert ("cell", 0) in report.offending
        assert ("mesh", -1) in report.offending

    def test_skewed_normal_breaks_orthogonality(self, q2):
        def rotate(a):
            c, s = np.cos(0.01), np.sin(0.01)
            a[:] = a @ np.array([[c, -s], [s, c]]).T
        report = validate_mesh(_tampered(q2, normal=rotate))
        assert not report.accepted
        assert report.max_orthogonality_deviation > 1e-3


# ---------------------------------------------------------------------------
# qgmesh 1 file format


def _roundtrip(mesh, path):
    save_mesh(mesh, path)
    return load_mesh(path)


_GROUPED = {
    "cell_edge_offsets": ("cell_edge_indices", "cell_edge_signs"),
    "vertex_edge_offsets": ("vertex_edge_indices", "vertex_edge_signs"),
    "cell_vertex_offsets": ("cell_vertex_indices", "cell_kite_areas"),
    "vertex_cell_offsets": ("vertex_cell_indices", "vertex_kite_areas"),
}


def _canonical_groups(mesh, offsets_name):
    """Adjacency rows sorted within each group, payloads carried along."""
    offsets = getattr(mesh, offsets_name)
    indices, payload = (getattr(mesh, n) for n in _GROUPED[offsets_name])
    out_i, out_p = indices.copy(), payload.copy()
    for g in range(len(offsets) - 1):
        lo, hi = offsets[g], offsets[g + 1]
        order = np.argsort(indices[lo:hi], kind="stable")
        out_i[lo:hi] = indices[lo:hi][order]
        out_p[lo:hi] = payload[lo:hi][order]
    return out_i, out_p


def _assert_meshes_identical(a, b):
    grouped_payloads = {n for pair in _GROUPED.values() for n in pair}
    for field in dataclasses.fields(type(a)):
        if field.name in grouped_payloads:
            continue
        va, vb = getattr(a, field.name), getattr(b, field.name)
        npt.assert_array_equal(va, vb, err_msg=field.name)
    # within-group adjacency order is not part of the file format; compare
    # the groups content-wise with their payloads carried along
    for offsets_name in _GROUPED:
        for ca, cb in zip(_canonical_groups(a, offsets_name),
                          _canonical_groups(b, offsets_name)):
            npt.assert_array_equal(ca, cb, err_msg=offsets_name)


class TestMeshFiles:
    def test_quad_round_trip_is_bitwise(self, q2, tmp_path):
        again = _roundtrip(q2, tmp_path / "q2.qgmesh")
        _assert_meshes_identical(q2, again)

    def test_cvt_round_trip_is_bitwise(self, cvt64, tmp_path):
        again = _roundtrip(cvt64, tmp_path / "cvt.qgmesh")
        _assert_meshes_identical(cvt64, again)

    def test_rectangle_round_trip_validates(self, tmp_path):
        mesh = build_quad_mesh(3, 5, 4.0, 1.5)
        again = _roundtrip(mesh, tmp_path / "r.qgmesh")
        assert validate_mesh(again).accepted

    def test_save_load_save_is_idempotent(self, cvt64, tmp_path):
        first, second = tmp_path / "a.qgmesh", tmp_path / "b.qgmesh"
        save_mesh(cvt64, first)
        save_mesh(load_mesh(first), second)
        assert first.read_bytes() == second.read_bytes()


def _q2_lines(q2, tmp_path):
    path = tmp_path / "base.qgmesh"
    save_mesh(q2, path)
    return path.read_text().splitlines()


def _load_edited(tmp_path, lines):
    path = tmp_path / "edited.qgmesh"
    path.write_text("\n".join(lines) + "\n")
    return load_mesh(path)


def _section_start(lines, name):
    return next(i for i, ln in enumerate(lines) if ln.startswith(name + " "))


class TestMeshFileErrors:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.qgmesh"
        path.write_text("")
        with pytest.raises(MeshFormatError, match="empty mesh file"):
            load_mesh(path)

    def test_wrong_magic(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        lines[0] = "notamesh 1"
        with pytest.raises(MeshFormatError, match="file header"):
            _load_edited(tmp_path, lines)

    def test_wrong_version(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        lines[0] = "qgmesh 2"
        with pytest.raises(MeshFormatError, match="version"):
            _load_edited(tmp_path, lines)

    def test_nonpositive_count(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        lines[_section_start(lines, "cells")] = "cells 0"
        with pytest.raises(MeshFormatError, match="count must be positive"):
            _load_edited(tmp_path, lines)

    def test_non_sequential_ids(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        row = _section_start(lines, "cells") + 2  # skip the comment line
        lines[row] = "7" + lines[row][1:]
        with pytest.raises(MeshFormatError, match="expected id 1"):
            _load_edited(tmp_path, lines)

    def test_unknown_cell_class(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        row = _section_start(lines, "cells") + 2
        lines[row] = lines[row].rsplit(" ", 1)[0] + " XX"
        with pytest.raises(MeshFormatError, match="unknown class 'XX'"):
            _load_edited(tmp_path, lines)

    def test_euler_violation_is_named(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        lines[_section_start(lines, "edges")] = "edges 13"
        with pytest.raises(MeshFormatError, match="Euler relation"):
            _load_edited(tmp_path, lines)

    def test_cell_index_out_of_range(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        row = _section_start(lines, "edges") + 2
        toks = lines[row].split()
        toks[5] = "99"
        lines[row] = " ".join(toks)
        with pytest.raises(MeshFormatError, match="cell index 99 out of range"):
            _load_edited(tmp_path, lines)

    def test_vertex_index_out_of_range(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        row = _section_start(lines, "edges") + 2
        toks = lines[row].split()
        toks[7] = "99"
        lines[row] = " ".join(toks)
        with pytest.raises(MeshFormatError, match="vertex index 99"):
            _load_edited(tmp_path, lines)

    def test_class_contradicts_vertex_count(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        start = _section_start(lines, "edges") + 2
        for row in range(start, start + 12):
            toks = lines[row].split()
            if toks[9] == "IE":
                toks[9] = "BE"
                lines[row] = " ".join(toks)
                break
        with pytest.raises(MeshFormatError, match="contradicts its vertex count"):
            _load_edited(tmp_path, lines)

    def test_missing_first_cell(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        row = _section_start(lines, "edges") + 2
        toks = lines[row].split()
        toks[5] = "-1"
        lines[row] = " ".join(toks)
        with pytest.raises(MeshFormatError, match="no first cell"):
            _load_edited(tmp_path, lines)

    def test_missing_vertex(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        row = _section_start(lines, "edges") + 2
        toks = lines[row].split()
        toks[7] = "-1"
        lines[row] = " ".join(toks)
        with pytest.raises(MeshFormatError, match="has no vertex"):
            _load_edited(tmp_path, lines)

    def test_kite_index_out_of_range(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        row = _section_start(lines, "kites") + 2
        toks = lines[row].split()
        toks[0] = "10"
        lines[row] = " ".join(toks)
        with pytest.raises(MeshFormatError, match="kites section: cell index 10"):
            _load_edited(tmp_path, lines)

    def test_trailing_tokens(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        lines.append("stray 42")
        with pytest.raises(MeshFormatError, match="trailing tokens"):
            _load_edited(tmp_path, lines)

    def test_truncated_file(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        with pytest.raises(MeshFormatError,
                           match="unexpected end of file while reading"):
            _load_edited(tmp_path, lines[: len(lines) // 2])

    def test_non_numeric_token(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        row = _section_start(lines, "cells") + 2
        toks = lines[row].split()
        toks[1] = "abc"
        lines[row] = " ".join(toks)
        with pytest.raises(MeshFormatError, match="expected real in cells"):
            _load_edited(tmp_path, lines)

    def test_contradictory_cell_class(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        start = _section_start(lines, "cells") + 2
        for row in range(start, start + 9):
            if lines[row].endswith(" BC1"):
                lines[row] = lines[row].rsplit(" ", 1)[0] + " IC"
                break
        with pytest.raises(MeshFormatError, match="contradict the edge topology"):
            _load_edited(tmp_path, lines)

    def test_single_cell_edge_loads_but_fails_validation(self, q2, tmp_path):
        lines = _q2_lines(q2, tmp_path)
        start = _section_start(lines, "edges") + 2
        target = None
        for row in range(start, start + 12):
            toks = lines[row].split()
            if toks[9] == "BE":
                toks[6] = "-1"
                lines[row] = " ".join(toks)
                target = int(toks[0]) - 1
                break
        mesh = _load_edited(tmp_path, lines)
        report = validate_mesh(mesh)
        assert not report.accepted
        assert ("edge", target) in report.offending


# ---------------------------------------------------------------------------
# centroidal Voronoi meshes


class TestCvtMeshes:
    def test_deterministic_rebuild(self, cvt64):
        again = build_cvt_mesh(UNIT_SQUARE, 64, 200, 7)
        _assert_meshes_identical(cvt64, again)

    def test_validates_at_cvt_tolerance(self, cvt64):
        report = validate_mesh(cvt64, CVT_ORTHOGONALITY_TOL)
        assert report.accepted
        assert report.euler_ok
        assert report.nonconvex_diamond_count == 0

    def test_quasi_uniform(self, cvt64):
        report = validate_mesh(cvt64, CVT_ORTHOGONALITY_TOL)
        assert 0.05 < report.min_edge_length_ratio < 1.0
        assert 1.0 < report.max_edge_length_ratio < 5.0

    def test_diamonds_cover_inner_cells_twice(self, cvt64):
        for i in cvt64.inner_cells:
            cover = cvt64.edge_diamond_areas[cvt64.edges_on_cell(int(i))].sum()
            ratio = cover / cvt64.cell_areas[i]
            assert 1.9 < ratio < 2.1

    def test_area_partitions(self, cvt64):
        total = cvt64.domain_area
        assert abs(total - 1.0) < 1e-9
        assert abs(cvt64.vertex_areas.sum() - total) <= 1e-12 * total
        assert abs(cvt64.edge_diamond_areas.sum() - total) <= 1e-12 * total
        npt.assert_array_equal(cvt64.edge_diamond_areas,
                               0.5 * cvt64.d_e * cvt64.l_e)

    def test_pentagon_domain(self, cvt_pentagon):
        report = validate_mesh(cvt_pentagon, CVT_ORTHOGONALITY_TOL)
        assert report.accepted

    def test_rejects_tiny_budget(self):
        with pytest.raises(MeshError):
            build_cvt_mesh(UNIT_SQUARE, 9, 10, 0)
        with pytest.raises(MeshError):
            build_cvt_mesh(UNIT_SQUARE, 64, -1, 0)
