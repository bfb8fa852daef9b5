"""Numeric core selection.

The compiled extension is preferred when present; the pure-Python twin is
the fallback and the reference.  Set ``ENERSHAPE_PURE=1`` to force the
fallback regardless of what is installed.
"""

import os

from . import _purecore
from . import tape  # noqa: F401  (re-exported for callers)

if os.environ.get("ENERSHAPE_PURE"):
    core = _purecore
else:
    try:
        from . import _fastcore as core  # type: ignore[no-redef]
    except ImportError:
        core = _purecore

pure = _purecore


def get_backend() -> str:
    """Name of the active numeric core: 'compiled' or 'pure'."""
    return core.backend_name()
