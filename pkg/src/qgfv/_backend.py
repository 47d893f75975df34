"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; the numpy
implementations are the fallback.  Setting the environment variable
``QGFV_PURE_PYTHON`` to a non-empty value forces the fallback, which is
useful for benchmarking and for debugging suspected kernel bugs.
"""

from __future__ import annotations

import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

if os.environ.get("QGFV_PURE_PYTHON"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels_c as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"
        logger.info("compiled kernels unavailable, using the numpy fallback")

remap_cell_to_vertex = _impl.remap_cell_to_vertex
remap_cell_to_edge = _impl.remap_cell_to_edge
gradient_normal = _impl.gradient_normal
skew_gradient_normal = _impl.skew_gradient_normal
divergence = _impl.divergence
vertex_curl = _impl.vertex_curl
flux_divergence = _impl.flux_divergence
