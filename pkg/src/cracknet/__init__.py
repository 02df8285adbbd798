"""Structured-prediction crack detection with a small convolutional network.

Hot loops (im2col, col2im, max-pooling, vote accumulation) run through numba when it is
available; set ``CRACKNET_BACKEND=numpy`` to force the pure-numpy path.
"""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
