"""Backend selection for the batched equilibrium kernel.

The compiled extension is used when importable; set ``EVPRICING_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

from . import _fallback

MODE_DC = _fallback.MODE_DC
MODE_STANDARD = _fallback.MODE_STANDARD
MODE_MSA = _fallback.MODE_MSA

queue_batch = _fallback.queue_batch

if os.environ.get("EVPRICING_PURE_PYTHON", "").strip() not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

if _compiled is not None:
    BACKEND = "cython"
    equilibrium_batch = _compiled.equilibrium_batch
else:
    BACKEND = "python"
    equilibrium_batch = _fallback.equilibrium_batch

python_equilibrium_batch = _fallback.equilibrium_batch
compiled_equilibrium_batch = None if _compiled is None else _compiled.equilibrium_batch
