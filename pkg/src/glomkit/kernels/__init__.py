"""Hot-loop kernels with a compiled core and a NumPy fallback.

The compiled extension (built from _ext.pyx) is preferred when importable;
otherwise the NumPy implementations in _py are used. Set GLOMKIT_KERNELS to
"python" or "compiled" to force a backend (the benchmark and the parity
tests rely on this). Both backends produce bit-identical results.
"""
import os

from . import _py

try:
    from . import _ext
except ImportError:
    _ext = None

_FORCED = os.environ.get("GLOMKIT_KERNELS", "auto").strip().lower()
if _FORCED in ("python", "py"):
    _impl = _py
elif _FORCED in ("compiled", "ext", "c"):
    if _ext is None:
        raise ImportError("GLOMKIT_KERNELS=compiled but the extension is not built")
    _impl = _ext
elif _FORCED in ("auto", ""):
    _impl = _ext if _ext is not None else _py
else:
    raise ImportError(f"unknown GLOMKIT_KERNELS value: {_FORCED!r}")

BACKEND = "compiled" if _impl is _ext else "python"


def available_backends():
    names = ["python"]
    if _ext is not None:
        names.append("compiled")
    return names


def get_backend(name):
    """Return the backend module by name ("python" or "compiled")."""
    if name == "python":
        return _py
    if name == "compiled":
        if _ext is None:
            raise ImportError("compiled kernel backend is not built")
        return _ext
    raise ValueError(f"unknown backend {name!r}")


paint_rle = _impl.paint_rle
runs_from_mask = _impl.runs_from_mask
label_components = _impl.label_components
pairwise_iou = _impl.pairwise_iou
nms_keep = _impl.nms_keep
union_area = _impl.union_area
