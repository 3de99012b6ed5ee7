"""Selects the compiled FK and optimizer kernels when built, else the numpy fallback.

Set ``RETARGETKIT_PURE_PYTHON=1`` to force the fallback.
"""
import os

if os.environ.get("RETARGETKIT_PURE_PYTHON", "") not in ("", "0"):
    from ._kernels_py import adam_update, fd_jacobian, fk

    BACKEND = "python"
else:
    try:
        from ._kernels import adam_update, fd_jacobian, fk

        BACKEND = "cython"
    except ImportError:
        from ._kernels_py import adam_update, fd_jacobian, fk

        BACKEND = "python"

__all__ = ["fk", "fd_jacobian", "adam_update", "BACKEND"]
