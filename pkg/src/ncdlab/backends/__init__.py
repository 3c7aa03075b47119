"""Kernel backend selection.

The compiled extension is used when its build artifact imports cleanly;
otherwise the numpy fallback takes over. Set NCDLAB_BACKEND=numpy or
NCDLAB_BACKEND=compiled to force the choice (forcing "compiled" raises
if the extension was not built).

The two backends compute the same quantities with the same conventions;
only floating-point summation order differs, so results can diverge in
the last bits. Reproducibility guarantees hold per backend.
"""

import os

from . import _kernels_np

_forced = os.environ.get("NCDLAB_BACKEND", "").strip().lower()

if _forced == "numpy":
    _impl = _kernels_np
    BACKEND = "numpy"
else:
    try:
        from . import _kernels_cy as _impl
        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise ImportError(
                "NCDLAB_BACKEND=compiled but the extension is not built; "
                "reinstall with a C compiler and Cython available"
            )
        _impl = _kernels_np
        BACKEND = "numpy"

NEAR_ZERO_NORM = _kernels_np.NEAR_ZERO_NORM
INVALID_SIM = _kernels_np.INVALID_SIM

queue_sims = _impl.queue_sims
mix_pool_sims = _impl.mix_pool_sims
