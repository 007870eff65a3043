"""Stepping-kernel backend selection.

The compiled kernel is preferred when its extension module imported
cleanly; the numpy fallback is always available.  CMPS_LAB_KERNEL may be
set to "cython" or "numpy" to force a backend (forcing "cython" without
the built extension raises at import of this package).
"""

import os

from . import jump_numpy

try:
    from . import jump_cython
except ImportError:
    jump_cython = None

_forced = os.environ.get("CMPS_LAB_KERNEL", "").strip().lower()
if _forced == "numpy":
    _active = "numpy"
elif _forced == "cython":
    if jump_cython is None:
        raise ImportError("CMPS_LAB_KERNEL=cython but the compiled kernel is not built")
    _active = "cython"
elif _forced:
    raise ImportError("unknown CMPS_LAB_KERNEL value %r" % _forced)
else:
    _active = "cython" if jump_cython is not None else "numpy"


def backend_name():
    return _active


def have_compiled():
    return jump_cython is not None
