"""Backend selection for the numerical kernels.

The compiled ``_ckernels`` extension is used when it has been built;
otherwise the numpy fallback in ``_pykernels`` is loaded. Setting
``BEAMTRACK_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("BEAMTRACK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

dirichlet = _impl.dirichlet
dirichlet_array = _impl.dirichlet_array
path_response = _impl.path_response
systematic_resample = _impl.systematic_resample
gaussian_logweights = _impl.gaussian_logweights
adam_step = _impl.adam_step
polyak = _impl.polyak

__all__ = [
    "BACKEND",
    "dirichlet",
    "dirichlet_array",
    "path_response",
    "systematic_resample",
    "gaussian_logweights",
    "adam_step",
    "polyak",
]
