"""Hot resampling kernels: compiled extension when built, numpy otherwise.

Set AISF_PURE_PY=1 to force the numpy fallback even when the extension is
available (the benchmark and parity tests import both backends directly).
"""

import os

from aisf._kernels import _slow

if os.environ.get("AISF_PURE_PY"):
    _impl = _slow
    COMPILED = False
else:
    try:
        from aisf._kernels import _fast as _impl  # type: ignore[no-redef]
        COMPILED = True
    except ImportError:
        _impl = _slow
        COMPILED = False

roi_align_forward = _impl.roi_align_forward
roi_align_backward = _impl.roi_align_backward
paste_bilinear = _impl.paste_bilinear

__all__ = ["COMPILED", "roi_align_forward", "roi_align_backward", "paste_bilinear"]
