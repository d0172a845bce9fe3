"""Kernel backend selection.

The compiled Cython kernel is preferred when present; XBARSIM_KERNEL=python
forces the numpy fallback, XBARSIM_KERNEL=compiled demands the extension and
raises if it is missing.  Both backends implement the same run_slot contract
(documented in fallback.py) and agree bit-for-bit on integer-exact workloads.
"""

from __future__ import annotations

import os

_choice = os.environ.get("XBARSIM_KERNEL", "auto")

if _choice == "python":
    from . import fallback as _impl
elif _choice == "compiled":
    from . import _core as _impl  # type: ignore[attr-defined]
else:
    if _choice != "auto":
        raise RuntimeError(
            f"XBARSIM_KERNEL={_choice!r} not recognized; "
            "use 'auto', 'compiled', or 'python'")
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import fallback as _impl

BACKEND: str = _impl.BACKEND
run_slot = _impl.run_slot
