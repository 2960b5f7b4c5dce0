"""Hot inner loops with a compiled backend and a pure-Python fallback.

The Cython extension is used when it was built; set ``APPGROWTH_PURE_PYTHON=1``
to force the fallback.  ``BACKEND`` names the active implementation.
"""

import os

from . import _pykernels as python

try:
    if os.environ.get("APPGROWTH_PURE_PYTHON") == "1":
        raise ImportError("pure-python backend requested")
    from . import _ckernels as compiled
except ImportError:
    compiled = None

_impl = compiled if compiled is not None else python
BACKEND = "cython" if compiled is not None else "python"

skipgram_epoch = _impl.skipgram_epoch
greedy_allocate = _impl.greedy_allocate

__all__ = ["BACKEND", "compiled", "python", "skipgram_epoch", "greedy_allocate"]
