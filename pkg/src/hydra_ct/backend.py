"""Select the Radon kernel backend at import time.

The compiled Cython extension is preferred; the numpy implementation is a
drop-in replacement with the same sampling scheme. Set HYDRA_CT_FORCE_NUMPY=1
to force the fallback (used by the benchmark and parity tests).
"""
import os

from . import _radon_numpy

if os.environ.get("HYDRA_CT_FORCE_NUMPY", "") not in ("", "0"):
    kernels = _radon_numpy
    BACKEND = "numpy"
else:
    try:
        from . import _radon_core as kernels  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        kernels = _radon_numpy
        BACKEND = "numpy"
