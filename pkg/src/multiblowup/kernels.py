"""Kernel selection: compiled extension when importable, else pure Python.

Set ``MULTIBLOWUP_PURE=1`` to force the fallback.
"""

import os

if os.environ.get("MULTIBLOWUP_PURE") == "1":
    from ._fallback import nonlinear_phase, rk4_radial

    BACKEND = "python"
else:
    try:
        from ._kernels import nonlinear_phase, rk4_radial

        BACKEND = "cython"
    except ImportError:  # extension not built
        from ._fallback import nonlinear_phase, rk4_radial

        BACKEND = "python"

__all__ = ["BACKEND", "nonlinear_phase", "rk4_radial"]
