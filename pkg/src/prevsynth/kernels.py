"""Hot-kernel backend, chosen once at import.

The compiled extension is used when it was built; otherwise the numpy
implementations take over. Setting ``PREVSYNTH_PURE_PYTHON=1`` forces the
fallback.
"""

import os

from prevsynth import _pykernels

if os.environ.get("PREVSYNTH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from prevsynth import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

history_kernel = _impl.history_kernel
prevalence_kernel = _impl.prevalence_kernel
cell_prevalence_kernel = _impl.cell_prevalence_kernel
binomial_loglik = _impl.binomial_loglik
binomial_deviance = _impl.binomial_deviance

__all__ = [
    "BACKEND",
    "history_kernel",
    "prevalence_kernel",
    "cell_prevalence_kernel",
    "binomial_loglik",
    "binomial_deviance",
]
