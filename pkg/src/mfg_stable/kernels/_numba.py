"""Loop kernels compiled with numba; same signatures as the numpy path."""

import numpy as np
from numba import njit


@njit(cache=True)
def scatter_matrix(csr_map, local, nnz):
    out = np.zeros(nnz)
    flat = local.ravel()
    for p in range(csr_map.shape[0]):
        out[csr_map[p]] += flat[p]
    return out


@njit(cache=True)
def scatter_vector(elements, local, n_nodes):
    out = np.zeros(n_nodes)
    ne, nl = elements.shape
    for e in range(ne):
        for a in range(nl):
            out[elements[e, a]] += local[e, a]
    return out


@njit(cache=True)
def weighted_stiffness_local(grads, volumes, wbar):
    ne, nl, d = grads.shape
    out = np.empty((ne, nl, nl))
    for e in range(ne):
        s = wbar[e] * volumes[e]
        for a in range(nl):
            for b in range(nl):
                acc = 0.0
                for i in range(d):
                    acc += grads[e, a, i] * grads[e, b, i]
                out[e, a, b] = s * acc
    return out


@njit(cache=True)
def weighted_mass_local(volumes, wloc, triple):
    ne, nl = wloc.shape
    out = np.empty((ne, nl, nl))
    for e in range(ne):
        for a in range(nl):
            for b in range(nl):
                acc = 0.0
                for k in range(nl):
                    acc += wloc[e, k] * triple[k, a, b]
                out[e, a, b] = volumes[e] * acc
    return out


@njit(cache=True)
def convection_local(grads, volumes, bw):
    ne, nl, d = grads.shape
    out = np.empty((ne, nl, nl))
    for e in range(ne):
        for a in range(nl):
            for b in range(nl):
                acc = 0.0
                for i in range(d):
                    acc += bw[e, a, i] * grads[e, b, i]
                out[e, a, b] = volumes[e] * acc
    return out


@njit(cache=True)
def element_gradient(grads, uloc):
    ne, nl, d = grads.shape
    out = np.zeros((ne, d))
    for e in range(ne):
        for a in range(nl):
            for i in range(d):
                out[e, i] += uloc[e, a] * grads[e, a, i]
    return out


@njit(cache=True)
def flux_local(grads, volumes, wbar, flux):
    ne, nl, d = grads.shape
    out = np.empty((ne, nl))
    for e in range(ne):
        s = wbar[e] * volumes[e]
        for a in range(nl):
            acc = 0.0
            for i in range(d):
                acc += flux[e, i] * grads[e, a, i]
            out[e, a] = s * acc
    return out
