"""Kernel backend selection.

The compiled extension is preferred when present; set ``COLOSIM_KERNELS=pure``
to force the Python fallback (or ``fast`` to require the extension).
"""

from __future__ import annotations

import os

from . import pure

_choice = os.environ.get("COLOSIM_KERNELS", "").strip().lower()

if _choice == "pure":
    _impl = pure
else:
    try:
        from . import _fast as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "fast":
            raise
        _impl = pure

iteration_latency = _impl.iteration_latency
BACKEND = _impl.BACKEND


def available_backends():
    """Names of importable kernel backends."""
    names = ["pure"]
    try:
        from . import _fast  # noqa: F401

        names.append("fast")
    except ImportError:
        pass
    return names
