"""Hot numeric kernels with a numba implementation and a pure-numpy fallback.

Backend selection: set PRIORNAV_BACKEND to "numba" or "numpy".  When unset,
numba is used if it imports, numpy otherwise.  The choice is made once at
import time; ``get_backend`` bypasses it for side-by-side comparisons.
"""
import os

_VALID = ("numba", "numpy")


def get_backend(name=None):
    """Return (module, name); name=None picks the env-configured default."""
    if name is None:
        name = os.environ.get("PRIORNAV_BACKEND", "").strip().lower() or None
    if name is None:
        try:
            from . import numba_backend
            return numba_backend, "numba"
        except ImportError:
            from . import numpy_backend
            return numpy_backend, "numpy"
    if name == "numba":
        from . import numba_backend
        return numba_backend, "numba"
    if name == "numpy":
        from . import numpy_backend
        return numpy_backend, "numpy"
    raise ValueError(f"backend must be one of {_VALID}, got {name!r}")


_impl, backend_name = get_backend()
normal_equations = _impl.normal_equations
total_cost = _impl.total_cost
dtw_accumulate = _impl.dtw_accumulate
