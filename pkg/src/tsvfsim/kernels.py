"""Backend selection for the hot loops.

The compiled extension ``tsvfsim._kernels`` is used when it imports;
otherwise, or when ``TSVFSIM_PURE_PYTHON=1`` is set, the NumPy versions in
``tsvfsim._kernels_py`` are used. ``BACKEND`` names the active choice.
"""
from __future__ import annotations

import os

from . import _kernels_py

_py = _kernels_py
_compiled = None
if os.environ.get("TSVFSIM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _compiled = None

_impl = _compiled if _compiled is not None else _py
BACKEND = "compiled" if _compiled is not None else "python"

be_same = _impl.be_same
be_mixed = _impl.be_mixed
rk4_packets = _impl.rk4_packets


def backends() -> dict:
    """Every available backend by name (the NumPy one always present)."""
    out = {"python": _py}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
