"""Hot inner loops with two interchangeable implementations.

The numba path is used unless ``CRACKNET_BACKEND=numpy`` is set or numba
fails to import. Both modules expose the same five functions; the tests
check them against each other.
"""

import logging

from .._env import requested_backend
from . import _numpy

log = logging.getLogger(__name__)

BACKEND = requested_backend()
if BACKEND == "numba":
    try:
        from . import _numba as _impl
    except ImportError:  # pragma: no cover - numba is a declared dependency
        log.warning("numba unavailable, falling back to numpy kernels")
        BACKEND = "numpy"
        _impl = _numpy
else:
    _impl = _numpy

im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
accumulate_votes = _impl.accumulate_votes

__all__ = ["BACKEND", "im2col", "col2im", "maxpool_forward", "maxpool_backward", "accumulate_votes"]
