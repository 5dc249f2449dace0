"""Select the kernel implementation once, at import time.

Set ``PATCHMVS_BACKEND=python`` to force the numpy fallback even when the
compiled module is available.
"""

import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

python_kernels = _pykernels
compiled_kernels = None

try:
    from . import _ckernels as compiled_kernels
except ImportError:  # pragma: no cover - depends on the build
    compiled_kernels = None

if os.environ.get("PATCHMVS_BACKEND", "").lower() == "python" or compiled_kernels is None:
    kernels = _pykernels
else:
    kernels = compiled_kernels

log.debug("patchmvs kernel backend: %s", kernels.BACKEND)


def get_kernels(name=None):
    """Return the active kernel module, or a named one (``"python"`` / ``"cython"``)."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "cython":
        if compiled_kernels is None:
            raise ImportError("compiled kernels are not built")
        return compiled_kernels
    raise ValueError(f"unknown backend {name!r}")
