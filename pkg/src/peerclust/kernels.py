"""Kernel selection: compiled extension if available, pure Python otherwise.

Set ``PEERCLUST_PURE_PYTHON=1`` to force the fallback (used by tests and
the benchmark). Both implementations are bitwise-equivalent; the compiled
one is just fast.
"""

import os

if os.environ.get("PEERCLUST_PURE_PYTHON", "") == "1":
    from . import _kernels_py as _impl
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

IMPLEMENTATION = _impl.IMPLEMENTATION
assign_clusters = _impl.assign_clusters
grad_field = _impl.grad_field
weighted_cost = _impl.weighted_cost
