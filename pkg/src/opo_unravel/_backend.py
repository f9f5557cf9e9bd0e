"""Select the compiled kernels when importable, else the pure-Python ones.

Set ``OPO_UNRAVEL_PURE_PYTHON=1`` to force the fallback.
"""
import importlib
import os

from . import _pykernels

COMPILED = False
kernels = _pykernels

if not os.environ.get("OPO_UNRAVEL_PURE_PYTHON"):
    try:
        kernels = importlib.import_module("opo_unravel._ckernels")
        COMPILED = True
    except ImportError:
        pass


def load(name):
    """Return the kernel module named ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _pykernels
    if name == "compiled":
        return importlib.import_module("opo_unravel._ckernels")
    raise ValueError(f"unknown kernel backend {name!r}")
