"""Selects the HNSW kernel backend at import time.

The compiled ``_hnsw_ext`` module is preferred; ``CATCACHE_PURE_PYTHON=1``
or a missing build selects the numpy fallback. ``BACKEND`` records which one
was chosen.
"""

from __future__ import annotations

import logging
import os
from types import ModuleType

from . import _hnsw_py

logger = logging.getLogger(__name__)

try:
    from . import _hnsw_ext as _compiled
except ImportError:  # extension not built
    _compiled = None


def get_kernels(name: str = "auto") -> ModuleType:
    """Return the kernel module for ``name`` ("auto", "compiled" or "python")."""
    if name == "python":
        return _hnsw_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("catcache._hnsw_ext is not built; run `pip install -e .`")
        return _compiled
    if name != "auto":
        raise ValueError(f"unknown kernel backend {name!r}")
    if os.environ.get("CATCACHE_PURE_PYTHON") or _compiled is None:
        return _hnsw_py
    return _compiled


def has_compiled() -> bool:
    return _compiled is not None


kernels = get_kernels()
BACKEND = "compiled" if kernels is _compiled else "python"
logger.debug("HNSW kernel backend: %s", BACKEND)
