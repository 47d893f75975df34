# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled mesh-loop kernels.

Signature-identical to qgfv._kernels_py; selected by qgfv._backend when the
extension built.  Loops run over compressed adjacency with no Python
object traffic inside.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def remap_cell_to_vertex(
    const long long[::1] offsets,
    const long long[::1] cells,
    const double[::1] kites,
    const double[::1] vertex_areas,
    const double[::1] f,
):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t v, k
    cdef double acc
    for v in range(n):
        acc = 0.0
        for k in range(offsets[v], offsets[v + 1]):
            acc += kites[k] * f[cells[k]]
        out[v] = acc / vertex_areas[v]
    return out_arr


def remap_cell_to_edge(
    const long long[::1] ce0,
    const long long[::1] ce1,
    const double[::1] f,
):
    cdef Py_ssize_t n = ce0.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t e
    for e in range(n):
        out[e] = 0.5 * (f[ce0[e]] + f[ce1[e]])
    return out_arr


def gradient_normal(
    const long long[::1] ce0,
    const long long[::1] ce1,
    const double[::1] d_e,
    const double[::1] f,
):
    cdef Py_ssize_t n = ce0.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t e
    for e in range(n):
        out[e] = (f[ce1[e]] - f[ce0[e]]) / d_e[e]
    return out_arr


def skew_gradient_normal(
    const long long[::1] ve0,
    const long long[::1] ve1,
    const double[::1] ts0,
    const double[::1] ts1,
    const double[::1] l_e,
    const double[::1] g,
):
    cdef Py_ssize_t n = ve0.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t e
    cdef double acc
    for e in range(n):
        acc = 0.0
        if ts0[e] != 0.0:
            acc += g[ve0[e]] * ts0[e]
        if ts1[e] != 0.0:
            acc += g[ve1[e]] * ts1[e]
        out[e] = acc / l_e[e]
    return out_arr


def divergence(
    const long long[::1] offsets,
    const long long[::1] edges,
    const double[::1] signs,
    const double[::1] l_e,
    const double[::1] cell_areas,
    const double[::1] u,
):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, k
    cdef long long e
    cdef double acc
    for i in range(n):
        acc = 0.0
        for k in range(offsets[i], offsets[i + 1]):
            e = edges[k]
            acc += u[e] * l_e[e] * signs[k]
        out[i] = acc / cell_areas[i]
    return out_arr


def vertex_curl(
    const long long[::1] offsets,
    const long long[::1] edges,
    const double[::1] tsigns,
    const double[::1] d_e,
    const double[::1] vertex_areas,
    const double[::1] u,
):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t v, k
    cdef long long e
    cdef double acc
    for v in range(n):
        acc = 0.0
        for k in range(offsets[v], offsets[v + 1]):
            e = edges[k]
            acc += u[e] * d_e[e] * tsigns[k]
        out[v] = -acc / vertex_areas[v]
    return out_arr


def flux_divergence(
    const long long[::1] offsets,
    const long long[::1] edges,
    const double[::1] signs,
    const double[::1] l_e,
    const double[::1] cell_areas,
    const double[::1] u,
    const double[::1] q,
):
    cdef Py_ssize_t n = offsets.shape[0] - 1
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, k
    cdef long long e
    cdef double acc
    for i in range(n):
        acc = 0.0
        for k in range(offsets[i], offsets[i + 1]):
            e = edges[k]
            acc += u[e] * q[e] * l_e[e] * signs[k]
        out[i] = acc / cell_areas[i]
    return out_arr
