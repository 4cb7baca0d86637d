"""Hot-kernel backends: compiled Cython core with a pure numpy fallback.

The backend is chosen once at import time.  Set ``HYDRONMPC_BACKEND=pure`` to
force the numpy fallback, or ``HYDRONMPC_BACKEND=compiled`` to require the
extension (raising if it was not built).
"""

from __future__ import annotations

import os

from . import pure

_requested = os.environ.get("HYDRONMPC_BACKEND", "").strip().lower()

if _requested in ("pure", "python"):
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested in ("compiled", "core"):
            raise ImportError(
                "HYDRONMPC_BACKEND=compiled but the extension is not built; "
                "reinstall the package with a C compiler available"
            )
        _impl = pure
        BACKEND = "pure"

lstm_final_hidden = _impl.lstm_final_hidden
mlp_eval = _impl.mlp_eval
mlp_input_jac = _impl.mlp_input_jac


def active_backend() -> str:
    """Name of the backend serving the hot kernels ('compiled' or 'pure')."""
    return BACKEND


def available_backends() -> dict:
    """Importable backend modules keyed by name (for tests and benchmarks)."""
    out = {"pure": pure}
    try:
        from . import _core

        out["compiled"] = _core
    except ImportError:
        pass
    return out


__all__ = [
    "BACKEND",
    "active_backend",
    "available_backends",
    "lstm_final_hidden",
    "mlp_eval",
    "mlp_input_jac",
    "pure",
]
