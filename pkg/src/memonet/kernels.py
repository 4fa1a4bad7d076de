"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback.  Set ``MEMONET_PURE_PYTHON=1`` to force the fallback.
"""
import os

from memonet import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("MEMONET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from memonet import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

softmax_rows_forward = _impl.softmax_rows_forward
softmax_rows_backward = _impl.softmax_rows_backward
layernorm_rows_forward = _impl.layernorm_rows_forward
layernorm_rows_backward = _impl.layernorm_rows_backward
bhattacharyya_rows = _impl.bhattacharyya_rows
bfs_distances = _impl.bfs_distances
lex_shortest_path = _impl.lex_shortest_path
act_weights = _impl.act_weights
nstep_returns = _impl.nstep_returns


def backends():
    """Map backend name -> module for every backend available here."""
    out = {"python": _kernels_py}
    try:
        from memonet import _kernels as compiled
    except ImportError:
        return out
    out["cython"] = compiled
    return out
