"""Kernel selection: compiled core when importable, numpy otherwise.

Set ``ROBUSTFORM_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if os.environ.get("ROBUSTFORM_BACKEND", "").lower() == "python":
    _compiled = None

NAME = "cython" if _compiled is not None else "python"


def _c(arr, dtype):
    return np.ascontiguousarray(arr, dtype=dtype)


if _compiled is not None:

    def sup_step(v_next, child, kernels):
        return _compiled.sup_step(_c(v_next, np.float64), _c(child, np.int64), _c(kernels, np.float64))

    def expect_step(v_next, child, weights):
        return _compiled.expect_step(_c(v_next, np.float64), _c(child, np.int64), _c(weights, np.float64))

    def minimax_step(v_next, v_now, s_next, s_now, child, support):
        return _compiled.minimax_step(
            _c(v_next, np.float64),
            _c(v_now, np.float64),
            _c(s_next, np.float64),
            _c(s_now, np.float64),
            _c(child, np.int64),
            _c(support, np.uint8),
        )

else:
    sup_step = _fallback.sup_step
    expect_step = _fallback.expect_step
    minimax_step = _fallback.minimax_step
