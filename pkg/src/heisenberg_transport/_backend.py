"""Kernel selection: the compiled core when importable, numpy otherwise.

Set ``HEISENBERG_TRANSPORT_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("HEISENBERG_TRANSPORT_BACKEND", "").lower() != "python":
    try:
        from . import _core as _impl  # noqa: F811

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _fallback

cc_reduced = _impl.cc_reduced
lattice_dijkstra = _impl.lattice_dijkstra
rk4_flow = _impl.rk4_flow
deposit_linear = _impl.deposit_linear
flux_trace = _impl.flux_trace


def implementations():
    """Both kernel sets, for comparisons; compiled is ``None`` if absent."""
    try:
        from . import _core
    except ImportError:  # pragma: no cover
        _core = None
    return {"compiled": _core, "python": _fallback}
