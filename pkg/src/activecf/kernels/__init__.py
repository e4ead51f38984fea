"""Hot inner loops, dispatched to numba when available.

Set ``ACTIVECF_DISABLE_NUMBA=1`` to force the pure-numpy path. Both
implementations live side by side so tests and the benchmark can compare
them directly.
"""

import logging
import os

from . import _numpy

_logger = logging.getLogger(__name__)

_disabled = os.environ.get("ACTIVECF_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

_impl = _numpy
if not _disabled:
    try:
        from . import _numba as _impl
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _logger.warning("numba unavailable, using numpy kernels")

BACKEND = "numpy" if _impl is _numpy else "numba"

em_estep = _impl.em_estep
fold_in_fixed_point = _impl.fold_in_fixed_point
fast_update_batch = _impl.fast_update_batch

__all__ = ["BACKEND", "em_estep", "fold_in_fixed_point", "fast_update_batch"]
