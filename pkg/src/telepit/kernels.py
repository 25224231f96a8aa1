"""Backend selection for the hot kernels.

The compiled extension is used when it imported cleanly; set
``TELEPIT_BACKEND=python`` to force the numpy fallback.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels

_impl = None
BACKEND = None


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    global _impl, BACKEND
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} unavailable; have {available_backends()}")
    _impl = _BACKENDS[name]
    BACKEND = name


def ode_rate_forward(x, nu, mu, f, alpha, corr, gamma):
    return _impl.ode_rate_forward(x, nu, mu, f, alpha, corr, gamma)


def ode_rate_backward(g, th, x, nu, mu, alpha, corr, gamma):
    return _impl.ode_rate_backward(g, th, x, nu, mu, alpha, corr, gamma)


def filter_valid(img, win):
    return _impl.filter_valid(img, win)


_requested = os.environ.get("TELEPIT_BACKEND")
if _requested:
    set_backend(_requested)
else:
    set_backend("cython" if _ckernels is not None else "python")
