"""Kernel selection.

The compiled core is used when it imports; ``RHEAOM_PURE=1`` forces the
pure-Python kernels.  ``get(name)`` returns a specific backend for parity
tests and benchmarks.
"""

import importlib
import os

from . import _pycore

_compiled = None
if not os.environ.get("RHEAOM_PURE"):
    try:
        _compiled = importlib.import_module("rheaom._core")
    except ImportError:
        _compiled = None

core = _compiled if _compiled is not None else _pycore
NAME = core.BACKEND


def available():
    return ["python"] + (["cython"] if _compiled is not None else [])


def get(name=None):
    if name is None:
        return core
    if name == "python":
        return _pycore
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled core is not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
