"""Kernel backend selection.

The compiled Cython extension is used when it imports; otherwise the numpy
fallback is used. Set ``CAVITYFORGE_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"

if os.environ.get("CAVITYFORGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._kernels import bilinear_sample, hankel_sum  # noqa: F401
        BACKEND = "cython"
    except ImportError:  # extension not built
        pass

if BACKEND == "python":
    bilinear_sample = _fallback.bilinear_sample
    hankel_sum = _fallback.hankel_sum

__all__ = ["BACKEND", "bilinear_sample", "hankel_sum"]
