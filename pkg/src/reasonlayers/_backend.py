"""Kernel backend chosen at import time.

The compiled module is used when it was built; setting
``REASONLAYERS_BACKEND=python`` forces the numpy fallback.
"""
import os

from . import _pykernels

kernels = _pykernels
name = "python"

if os.environ.get("REASONLAYERS_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        pass
    else:
        kernels = _ckernels
        name = "cython"
