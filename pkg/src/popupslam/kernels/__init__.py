"""Backend dispatch for the hot kernels.

POPUP_BACKEND selects the implementation:
  "numba"  force the JIT kernels (ImportError if numba is unavailable)
  "numpy"  force the vectorized fallback
  "auto"   (default) numba when importable, numpy otherwise
"""

from __future__ import annotations

import os

from . import numpy_impl

_VALID = ("auto", "numba", "numpy")


def _load(name: str):
    if name not in _VALID:
        raise ValueError(f"POPUP_BACKEND must be one of {_VALID}, got {name!r}")
    if name == "numpy":
        return numpy_impl, "numpy"
    try:
        from . import numba_impl

        return numba_impl, "numba"
    except ImportError:
        if name == "numba":
            raise
        return numpy_impl, "numpy"


_impl, BACKEND = _load(os.environ.get("POPUP_BACKEND", "auto"))

linearize_plane_factors = _impl.linearize_plane_factors
popup_walls_batch = _impl.popup_walls_batch
render_scene_depth = _impl.render_scene_depth
fuse_depth_maps = _impl.fuse_depth_maps
canonical_sign_batch = numpy_impl.canonical_sign_batch


def backend_name() -> str:
    return BACKEND
