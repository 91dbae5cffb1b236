"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when
``FLUXCASCADE_PURE=1`` is set, the numpy versions are used.
"""
from __future__ import annotations

import os

from . import _kernels_py as pure

BACKEND = "python"
_impl = pure
if os.environ.get("FLUXCASCADE_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

radial_cutoff_eval = _impl.radial_cutoff_eval
stencil_reduce = _impl.stencil_reduce
count_within = _impl.count_within
