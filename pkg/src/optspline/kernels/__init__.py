"""Hot numerical kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it was built and importable; setting the
environment variable ``OPTSPLINE_PURE_PYTHON=1`` forces the fallback.
``BACKEND`` names the active implementation.
"""

import os

from . import _pykernels

if os.environ.get("OPTSPLINE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

linear_em = _impl.linear_em
paper_verlet = _impl.paper_verlet
odd_power_moments = _impl.odd_power_moments

__all__ = ["BACKEND", "linear_em", "paper_verlet", "odd_power_moments"]
