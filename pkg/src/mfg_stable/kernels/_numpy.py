"""Vectorised numpy element kernels (reference path, always available)."""

import numpy as np


def scatter_matrix(csr_map, local, nnz):
    return np.bincount(csr_map, weights=local.ravel(), minlength=nnz)


def scatter_vector(elements, local, n_nodes):
    return np.bincount(elements.ravel(), weights=local.ravel(), minlength=n_nodes)


def weighted_stiffness_local(grads, volumes, wbar):
    return np.einsum("e,eai,ebi->eab", wbar * volumes, grads, grads)


def weighted_mass_local(volumes, wloc, triple):
    return volumes[:, None, None] * np.einsum("ek,kab->eab", wloc, triple)


def convection_local(grads, volumes, bw):
    return volumes[:, None, None] * np.einsum("eai,ebi->eab", bw, grads)


def element_gradient(grads, uloc):
    return np.einsum("ea,eai->ei", uloc, grads)


def flux_local(grads, volumes, wbar, flux):
    return (wbar * volumes)[:, None] * np.einsum("ei,eai->ea", flux, grads)
