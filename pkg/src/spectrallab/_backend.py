import os

from . import _fallback

if os.environ.get("SPECTRALLAB_PURE_PYTHON"):
    kernels = _fallback
else:
    try:
        from . import _kernels as kernels
    except ImportError:
        kernels = _fallback

BACKEND = kernels.NAME
