"""Hot spatial kernels with a switchable backend.

``CMEM_KERNELS=numba`` (the default when numba imports) uses compiled loops;
``CMEM_KERNELS=numpy`` forces the pure-numpy path. The choice is made once at
import time; ``use_backend`` swaps it afterwards (tests, benchmarks).
"""

import os

from . import _numpy

try:
    from . import _numba
except ImportError:  # pragma: no cover - numba is optional
    _numba = None

KERNEL_NAMES = (
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
    "upsample2x2_forward",
    "upsample2x2_backward",
)

BACKEND = None


def available_backends():
    return ["numpy"] + (["numba"] if _numba is not None else [])


def use_backend(name):
    """Rebind the module-level kernels to ``name`` ('numba' or 'numpy')."""
    global BACKEND
    if name == "numba" and _numba is None:
        raise RuntimeError("numba backend requested but numba is not importable")
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown kernel backend {name!r}")
    impl = _numba if name == "numba" else _numpy
    g = globals()
    for kernel in KERNEL_NAMES:
        g[kernel] = getattr(impl, kernel)
    BACKEND = name


use_backend(os.environ.get("CMEM_KERNELS", "numba" if _numba is not None else "numpy"))
