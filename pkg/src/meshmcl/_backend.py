"""Kernel selection: compiled ``_core`` when importable, else ``_pycore``.

Set ``MESHMCL_PURE_PYTHON=1`` to force the NumPy fallback.
"""

import os

if os.environ.get("MESHMCL_PURE_PYTHON", "") not in ("", "0"):
    from . import _pycore as kernels

    BACKEND = "python"
else:
    try:
        from . import _core as kernels

        BACKEND = "cython"
    except ImportError:  # extension not built
        from . import _pycore as kernels

        BACKEND = "python"

__all__ = ["BACKEND", "kernels", "load"]


def load(name: str):
    """Return the kernel module for ``name`` ("cython" or "python")."""
    if name == "python":
        from . import _pycore

        return _pycore
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")
