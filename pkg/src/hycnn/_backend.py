"""Pick the compiled kernels when built, else the numpy fallback.

Set HYCNN_PURE_PYTHON=1 to force the fallback.
"""
import os

from . import _kernels_py as pure

compiled = None
if os.environ.get("HYCNN_PURE_PYTHON", "") != "1":
    try:
        from . import _kernels as compiled
    except ImportError:
        compiled = None

impl = compiled if compiled is not None else pure
name = "cython" if compiled is not None else "numpy"

lse_gate = impl.lse_gate
softmin_rows = impl.softmin_rows
