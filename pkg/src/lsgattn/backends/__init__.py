"""Kernel backend selection.

The compiled Cython extension is picked at import time when present; the
pure numpy fallback is used otherwise. LSG_BACKEND=pure or
LSG_BACKEND=compiled forces a choice, and use() switches at runtime (the
bench CLI exposes this as --backend).
"""

import os

from . import pure

try:
    from . import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

_BACKENDS = {"pure": pure}
if compiled is not None:
    _BACKENDS["compiled"] = compiled


def _initial():
    req = os.environ.get("LSG_BACKEND", "auto")
    if req == "auto":
        return compiled if compiled is not None else pure
    return resolve(req)


def resolve(name):
    """Map a backend name ('auto' allowed) to a kernel module."""
    if name == "auto":
        return compiled if compiled is not None else pure
    try:
        return _BACKENDS[name]
    except KeyError:
        raise RuntimeError(
            f"backend {name!r} not available (have: {sorted(_BACKENDS)})"
        ) from None


_active = _initial()


def active():
    """The kernel module currently in use."""
    return _active


def name():
    return _active.NAME


def available():
    return sorted(_BACKENDS)


def use(backend):
    """Switch backends; accepts a name or a kernel module."""
    global _active
    _active = resolve(backend) if isinstance(backend, str) else backend
    return _active
