"""Select the compiled kernel sums, falling back to numpy.

Set ``MORSEFLOW_BACKEND=python`` to force the fallback even when the
extension is importable.
"""

from __future__ import annotations

import os
from types import ModuleType

from morseflow import _pykernels


def _load() -> tuple[ModuleType, str]:
    if os.environ.get("MORSEFLOW_BACKEND", "").lower() == "python":
        return _pykernels, "python"
    try:
        from morseflow import _ckernels
    except ImportError:
        return _pykernels, "python"
    return _ckernels, "cython"


kernels, BACKEND = _load()


def available_backends() -> dict[str, ModuleType]:
    """All importable kernel implementations keyed by name."""
    out = {"python": _pykernels}
    try:
        from morseflow import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out
