"""Process-wide switches read from the environment.

``CRACKNET_BACKEND``   ``numba`` (default when importable) or ``numpy``.
``CRACKNET_FLOAT64``   set to ``1`` to run in 64-bit check mode.
"""

import os

import numpy as np


def _flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


def requested_backend() -> str:
    name = os.environ.get("CRACKNET_BACKEND", "numba").strip().lower()
    if name not in {"numba", "numpy"}:
        raise ValueError(f"CRACKNET_BACKEND must be 'numba' or 'numpy', got {name!r}")
    return name


CHECK_MODE = _flag("CRACKNET_FLOAT64")
DEFAULT_DTYPE = np.float64 if CHECK_MODE else np.float32
