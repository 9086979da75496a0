"""Dispatch layer over the compiled and pure-numpy kernel backends.

The compiled extension (``stepsmith.kernels._hot``) and the numpy reference
implementation expose the same five functions with identical semantics.
Which one runs is decided once, at import time, from the environment
variable ``STEPSMITH_KERNELS``:

* ``auto`` (default): use the extension if it imported cleanly, else fall
  back to numpy silently.
* ``ext``: require the extension; raise if it is unavailable.
* ``py``: force the numpy reference implementation.

``BACKEND`` records the decision ("ext" or "py") so tests and benchmarks
can report which code actually ran.
"""

import os

import numpy as np

from stepsmith.kernels import reference

_choice = os.environ.get("STEPSMITH_KERNELS", "auto").strip().lower()
if _choice not in ("auto", "ext", "py"):
    raise ValueError(
        "STEPSMITH_KERNELS must be one of 'auto', 'ext', 'py'; got %r" % _choice
    )

_impl = reference
BACKEND = "py"
if _choice in ("auto", "ext"):
    try:
        from stepsmith.kernels import _hot as _impl_ext
    except ImportError:
        if _choice == "ext":
            raise ImportError(
                "STEPSMITH_KERNELS=ext but the compiled extension "
                "stepsmith.kernels._hot is not available; rebuild the "
                "package or set STEPSMITH_KERNELS=py"
            )
    else:
        _impl = _impl_ext
        BACKEND = "ext"


def _prep(a):
    # Memoryview signatures demand C-contiguous float32/float64 input.
    a = np.ascontiguousarray(a)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    return a


def im2col3x3(x):
    return _impl.im2col3x3(_prep(x))


def col2im3x3(cols, channels):
    return _impl.col2im3x3(_prep(cols), channels)


def cell_forward(preact, c_prev):
    return _impl.cell_forward(_prep(preact), _prep(c_prev))


def cell_backward_h(dh, gates, tanh_c):
    return _impl.cell_backward_h(_prep(dh), _prep(gates), _prep(tanh_c))


def cell_backward_c(dc, gates, c_prev):
    return _impl.cell_backward_c(_prep(dc), _prep(gates), _prep(c_prev))
