"""Hot scalar kernels: compiled extension when built, NumPy fallback otherwise.

Set ``CORE_ECG_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

if os.environ.get("CORE_ECG_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

stdm_codes = _impl.stdm_codes
fda_noise_scale = _impl.fda_noise_scale

__all__ = ["BACKEND", "stdm_codes", "fda_noise_scale"]
