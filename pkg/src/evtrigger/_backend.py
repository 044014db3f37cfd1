"""Kernel backend selection.

The compiled Cython module ``evtrigger._kernels`` is used when it imports;
otherwise the pure-Python ``evtrigger._fallback`` takes over.  Set
``EVTRIGGER_BACKEND=python`` to force the fallback, or ``=compiled`` to make
a missing extension an import error.
"""
import os

from . import _fallback

_requested = os.environ.get("EVTRIGGER_BACKEND", "auto").strip().lower()

compiled = None
if _requested != "python":
    try:
        from . import _kernels as compiled
    except ImportError:
        if _requested == "compiled":
            raise
        compiled = None

kernels = compiled if compiled is not None else _fallback
name = "compiled" if compiled is not None else "python"


def use(backend: str):
    """Switch backend at runtime (``"compiled"`` or ``"python"``)."""
    global kernels, name
    if backend == "python":
        kernels, name = _fallback, "python"
    elif backend == "compiled":
        if compiled is None:
            raise ImportError("compiled kernels are not built")
        kernels, name = compiled, "compiled"
    else:
        raise ValueError(f"unknown backend {backend!r}")
