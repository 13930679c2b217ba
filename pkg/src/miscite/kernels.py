"""Kernel dispatch.

The compiled extension ``miscite._kernels`` is used when it has been built;
otherwise the numpy fallback in ``miscite._kernels_py`` is imported. Set
``MISCITE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py as python_kernels

compiled_kernels = None
if os.environ.get("MISCITE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as compiled_kernels
    except ImportError:  # extension not built
        compiled_kernels = None

_impl = compiled_kernels if compiled_kernels is not None else python_kernels

BACKEND = "compiled" if compiled_kernels is not None else "python"

mean_aggregate = _impl.mean_aggregate
mean_aggregate_backward = _impl.mean_aggregate_backward
fnv1a64 = _impl.fnv1a64
hash_counts = _impl.hash_counts

__all__ = [
    "BACKEND",
    "compiled_kernels",
    "python_kernels",
    "mean_aggregate",
    "mean_aggregate_backward",
    "fnv1a64",
    "hash_counts",
]
