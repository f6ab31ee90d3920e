"""Hot inner loops with a compiled backend and a numpy fallback.

The compiled module is built from ``_kernels.pyx`` at install time.  When it
is missing, or when ``MEMHJB_PURE_PYTHON=1`` is set, the numpy versions in
``_fallback`` are used instead.  ``BACKEND`` names the active one.
"""

import os

from . import _fallback

if os.environ.get("MEMHJB_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "python"

sl_sweep = _impl.sl_sweep
exp_sweeps = _impl.exp_sweeps
causal_trapezoid = _impl.causal_trapezoid


def backends():
    """Return ``{name: module}`` for every backend importable here."""
    out = {"python": _fallback}
    try:
        from . import _kernels

        out["compiled"] = _kernels
    except ImportError:
        pass
    return out


__all__ = ["BACKEND", "backends", "sl_sweep", "exp_sweeps", "causal_trapezoid"]
