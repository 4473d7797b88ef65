"""Hot numerical kernels, compiled when available.

The Cython extension is preferred; a NumPy fallback keeps pure-source
installs working.  Set ``DEBIAS_MF_KERNEL=python`` or ``=cython`` to force a
backend (the benchmark uses this to compare the two).
"""

import os

from . import _ridge_py

try:
    from . import _ridge_cy
except ImportError:  # extension not built
    _ridge_cy = None

_BACKENDS = {"python": _ridge_py}
if _ridge_cy is not None:
    _BACKENDS["cython"] = _ridge_cy


def get_backend(name=None):
    """Resolve a kernel module by name, env var, or availability."""
    name = name or os.environ.get("DEBIAS_MF_KERNEL", "").strip().lower() or None
    if name is None:
        return _BACKENDS.get("cython", _ridge_py)
    if name not in ("python", "cython"):
        raise ValueError(f"unknown kernel backend {name!r}; use 'python' or 'cython'")
    if name not in _BACKENDS:
        raise ImportError("the compiled kernel is not available; build it with "
                          "'python setup.py build_ext --inplace'")
    return _BACKENDS[name]


_active = get_backend()
BACKEND = "cython" if _active is _ridge_cy else "python"
solve_rows = _active.solve_rows

__all__ = ["solve_rows", "BACKEND", "get_backend"]
