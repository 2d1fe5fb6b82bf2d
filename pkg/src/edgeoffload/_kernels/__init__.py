"""Hot loops: simulator state machines and value-iteration sweeps.

The Cython build is used when importable; otherwise (or when the environment
variable ``EDGEOFFLOAD_PURE_PYTHON`` is set to a non-empty value) the
pure-Python module is used. Both produce identical results.
"""

import os

from . import _pykernels as python

BACKEND = "python"
compiled = None
if not os.environ.get("EDGEOFFLOAD_PURE_PYTHON"):
    try:
        from . import _ckernels as compiled
    except ImportError:  # extension not built
        compiled = None

active = compiled if compiled is not None else python
if compiled is not None:
    BACKEND = "cython"


def get(name: str):
    """Return the module implementing ``name`` ("cython" or "python")."""
    if name == "python":
        return python
    if name == "cython":
        if compiled is None:
            raise ImportError("compiled kernels are not available")
        return compiled
    raise ValueError(f"unknown backend {name!r}")
