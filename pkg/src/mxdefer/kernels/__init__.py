"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``MXDEFER_NO_NUMBA=1`` to force the numpy implementations (also used
automatically when numba is not importable). Both paths expose
``weighted_loss_grad``, ``project`` and ``minimize_weighted``.
"""

import os

from . import _numpy
from .codes import *  # noqa: F401,F403

USING_NUMBA = False

if os.environ.get("MXDEFER_NO_NUMBA", "").strip().lower() not in ("1", "true", "yes"):
    try:
        from . import _numba as _impl

        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba missing
        _impl = _numpy
else:
    _impl = _numpy

weighted_loss_grad = _impl.weighted_loss_grad
project = _impl.project
minimize_weighted = _impl.minimize_weighted

BACKEND = "numba" if USING_NUMBA else "numpy"
