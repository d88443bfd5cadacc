"""Engine selection: compiled kernels when available, numpy fallback otherwise.

Both engines implement the identical kernel contract and produce bit-identical
results (covered by the parity test suite).  Selection happens once at import:

* ``SAGALD_ENGINE=python`` forces the numpy engine,
* ``SAGALD_ENGINE=cython`` requires the compiled engine (ImportError if the
  extension was not built),
* unset: compiled if importable, numpy otherwise.
"""

import os

from . import _pyengine

_choice = os.environ.get("SAGALD_ENGINE", "").strip().lower()

if _choice == "python":
    active = _pyengine
elif _choice == "cython":
    from . import _speedups as active
else:
    try:
        from . import _speedups as active
    except ImportError:
        active = _pyengine

BACKEND = active.BACKEND
direct_chunk = active.direct_chunk
map_chunk = active.map_chunk


def available_engines():
    out = [_pyengine]
    try:
        from . import _speedups
        out.append(_speedups)
    except ImportError:
        pass
    return out
