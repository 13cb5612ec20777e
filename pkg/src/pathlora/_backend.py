"""Kernel selection: compiled extension when importable, numpy otherwise."""

import os

if os.environ.get("PATHLORA_PURE_PYTHON", "") not in ("", "0"):
    from ._fallback import jacobi_sweeps, xoshiro_fill

    BACKEND = "python"
else:
    try:
        from ._kernels import jacobi_sweeps, xoshiro_fill

        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._fallback import jacobi_sweeps, xoshiro_fill

        BACKEND = "python"

__all__ = ["BACKEND", "jacobi_sweeps", "xoshiro_fill"]
