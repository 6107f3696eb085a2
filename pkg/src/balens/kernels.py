"""Backend selection for the training kernels.

The compiled extension is used when it imports; otherwise, or when the
``BALENS_PURE_PYTHON`` environment variable is set to a non-empty value,
the numpy fallback is used.
"""
from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and not os.environ.get("BALENS_PURE_PYTHON"):
    impl = _compiled
    BACKEND = "cython"
else:
    impl = _kernels_py
    BACKEND = "python"


def get(name: str | None = None):
    """Kernel module by name (``"cython"`` / ``"python"``); ``None`` gives the default."""
    if name is None:
        return impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


def compiled_available() -> bool:
    return _compiled is not None
