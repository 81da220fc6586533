"""Pick the time-stepping kernel at import time.

The compiled Cython kernel is used when it was built; otherwise the numpy
fallback.  ``DYNOGRAPH_BACKEND=python`` forces the fallback.
"""
import os

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_forced = os.environ.get("DYNOGRAPH_BACKEND", "").lower()

if _compiled is not None and _forced != "python":
    run_batch = _compiled.run_batch
    BACKEND = "compiled"
else:
    run_batch = _fallback.run_batch
    BACKEND = "python"

KERNELS = {"python": _fallback.run_batch}
if _compiled is not None:
    KERNELS["compiled"] = _compiled.run_batch
