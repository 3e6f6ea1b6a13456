"""Backend selection for the E-step kernel.

The compiled extension is used when it was built and importable; set
``SPIDEREM_PURE_PYTHON=1`` to force the numpy implementation.
"""
import os

from . import _kernels_py

BACKENDS = {"python": _kernels_py.estep_sums}

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
else:
    BACKENDS["compiled"] = _compiled.estep_sums

if _compiled is not None and os.environ.get("SPIDEREM_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "compiled"
else:
    BACKEND = "python"

estep_sums = BACKENDS[BACKEND]
