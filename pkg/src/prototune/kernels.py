"""Kernel backend selection.

The compiled extension (`prototune._ckernels`, built from Cython) is used
when importable; otherwise the pure-numpy reference implementation takes
over.  Set PROTOTUNE_KERNELS=python or =c to force a backend; forcing "c"
raises if the extension is missing.  Both backends implement identical
math; see benchmarks/bench_kernels.py for a speed comparison.
"""
from __future__ import annotations

import os

from . import _pykernels

_forced = os.environ.get("PROTOTUNE_KERNELS", "").strip().lower()

if _forced == "python":
    _impl = _pykernels
elif _forced == "c":
    from . import _ckernels as _impl  # type: ignore[no-redef]
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pykernels

BACKEND_NAME: str = _impl.BACKEND_NAME
ce_cosine_fb = _impl.ce_cosine_fb
sim_loss_fb = _impl.sim_loss_fb


def get_backend(name: str):
    """Return a specific backend module ("python" or "c"), for benchmarks/tests."""
    if name == "python":
        return _pykernels
    if name == "c":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
