"""Kernel backend selection.

The compiled extension is used when it imports; setting
``TREEIMPUTE_BACKEND=python`` forces the pure-Python implementation, which
produces identical trees.
"""

from __future__ import annotations

import os

from . import _fallback

_BACKENDS = {"python": _fallback}
try:  # pragma: no cover - depends on the build
    from . import _core

    _BACKENDS["compiled"] = _core
except ImportError:  # pragma: no cover
    _core = None


def available() -> list[str]:
    return sorted(_BACKENDS)


def get(name: str | None = None):
    """Kernel module by name; defaults to the environment choice, then compiled."""
    name = name or os.environ.get("TREEIMPUTE_BACKEND") or ("compiled" if _core else "python")
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available()}") from None


def active_name() -> str:
    mod = get()
    return "compiled" if mod is _core else "python"
