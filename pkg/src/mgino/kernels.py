"""Hot-loop kernels: compiled Cython core with a numpy fallback.

The compiled module is used when it imports; set ``MGINO_PURE_PYTHON=1``
to force the fallback.  ``BACKEND`` names the active implementation.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("MGINO_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

segment_sum = _impl.segment_sum
radius_neighbors = _impl.radius_neighbors

__all__ = ["BACKEND", "segment_sum", "radius_neighbors"]
