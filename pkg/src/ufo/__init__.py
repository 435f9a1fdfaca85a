"""Desk-scale group-based co-object segmentation toolkit."""

import os

# Single-threaded BLAS by default: the determinism guarantees (bitwise
# checkpoint replay, group isolation) assume a fixed reduction order.
# Respect explicit user overrides. Must happen before numpy is imported.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from .errors import UFOError  # noqa: E402,F401

__version__ = "0.1.0"
