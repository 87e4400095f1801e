"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``GNFBC_BACKEND=python`` to force the fallback.
"""

import os

if os.environ.get("GNFBC_BACKEND", "").lower() == "python":
    from . import _pykernels as _impl
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _pykernels as _impl
        BACKEND = "python"

spmm = _impl.spmm
edge_dot = _impl.edge_dot
segment_softmax = _impl.segment_softmax
segment_softmax_backward = _impl.segment_softmax_backward
segment_sum = _impl.segment_sum
scatter_sum = _impl.scatter_sum
neighbor_penalty = _impl.neighbor_penalty
neighbor_penalty_grad = _impl.neighbor_penalty_grad
dirichlet_energy = _impl.dirichlet_energy
blend_act = _impl.blend_act
blend_act_backward = _impl.blend_act_backward

__all__ = [
    "BACKEND",
    "spmm",
    "edge_dot",
    "segment_softmax",
    "segment_softmax_backward",
    "segment_sum",
    "scatter_sum",
    "neighbor_penalty",
    "neighbor_penalty_grad",
    "dirichlet_energy",
    "blend_act",
    "blend_act_backward",
]
