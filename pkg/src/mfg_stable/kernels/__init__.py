"""Element-level assembly kernels.

Two interchangeable implementations exist: loop kernels compiled with numba
and a vectorised numpy path.  The numba path is used when numba imports and the
environment variable ``MFG_STABLE_NUMBA`` is not set to ``0``/``false``/``off``.
:func:`set_backend` switches at runtime (used by the benchmark and the parity
tests).
"""

import os

import numpy as np
import scipy.sparse as sp

from . import _numpy

try:
    from . import _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
    HAVE_NUMBA = False

_OFF = {"0", "false", "off", "no"}


def _default_backend():
    if HAVE_NUMBA and os.environ.get("MFG_STABLE_NUMBA", "1").strip().lower() not in _OFF:
        return "numba"
    return "numpy"


_impl = _numba if _default_backend() == "numba" else _numpy


def backend() -> str:
    return "numba" if _impl is _numba and _numba is not None else "numpy"


def set_backend(name: str) -> str:
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend name."""
    global _impl
    prev = backend()
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not available")
        _impl = _numba
    elif name == "numpy":
        _impl = _numpy
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def implementation(name: str):
    return {"numba": _numba, "numpy": _numpy}[name]


def build_pattern(elements, n_nodes):
    """CSR pattern of the P1 connectivity and the local-to-CSR slot map."""
    ne, nl = elements.shape
    rows = np.repeat(elements, nl, axis=1).ravel()
    cols = np.tile(elements, (1, nl)).ravel()
    keys = rows * n_nodes + cols
    uniq, csr_map = np.unique(keys, return_inverse=True)
    indices = (uniq % n_nodes).astype(np.int32)
    indptr = np.zeros(n_nodes + 1, dtype=np.int32)
    np.cumsum(np.bincount(uniq // n_nodes, minlength=n_nodes), out=indptr[1:])
    csr_map = csr_map.ravel().astype(np.int64)
    for a in (indices, indptr, csr_map):
        a.flags.writeable = False
    return indptr, indices, csr_map


def to_csr(pattern, local, n_nodes):
    indptr, indices, csr_map = pattern
    data = _impl.scatter_matrix(csr_map, np.ascontiguousarray(local), indices.shape[0])
    return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(n_nodes, n_nodes))


def scatter_vector(elements, local, n_nodes):
    return _impl.scatter_vector(elements, np.ascontiguousarray(local), n_nodes)


def weighted_stiffness_local(grads, volumes, wbar):
    return _impl.weighted_stiffness_local(grads, volumes, np.ascontiguousarray(wbar, dtype=float))


def weighted_mass_local(volumes, wloc, triple):
    return _impl.weighted_mass_local(volumes, np.ascontiguousarray(wloc, dtype=float), triple)


def convection_local(grads, volumes, bw):
    return _impl.convection_local(grads, volumes, np.ascontiguousarray(bw, dtype=float))


def element_gradient(grads, uloc):
    return _impl.element_gradient(grads, np.ascontiguousarray(uloc, dtype=float))


def flux_local(grads, volumes, wbar, flux):
    return _impl.flux_local(
        grads, volumes, np.ascontiguousarray(wbar, dtype=float), np.ascontiguousarray(flux, dtype=float)
    )
