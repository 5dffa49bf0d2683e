"""Uniform periodic triangulations of the unit torus in one and two dimensions.

Nodes sit on the grid ``h * (i, j)`` with ``0 <= i, j < n``; node ``(i, j)``
has index ``i + n * j``.  In 2D each grid square is cut along the diagonal
from its lower-left to its upper-right corner, giving the two triangles

    (ll, lr, ur)  and  (ll, ur, ul).

Nodes on opposite faces are identified, so every element is interior and the
mesh has exactly ``n**d`` nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from math import factorial

import numpy as np

from .errors import ValidationError

__all__ = ["PeriodicMesh", "build_mesh", "locate_and_interpolate", "interpolate"]


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PeriodicMesh:
    """Immutable structured P1 mesh of ``[0, 1)^dim`` with periodic wrap.

    Attributes
    ----------
    elements : (ne, dim + 1) int array of node indices.
    local_coords : (ne, dim + 1, dim) unwrapped vertex coordinates, i.e. the
        element anchor plus the reference offsets; used for quadrature.
    grads : (ne, dim + 1, dim) constant gradients of the local hat functions.
    volumes : (ne,) element measures.
    """

    dim: int
    n: int
    nodes: np.ndarray = field(repr=False)
    elements: np.ndarray = field(repr=False)
    local_coords: np.ndarray = field(repr=False)
    grads: np.ndarray = field(repr=False)
    volumes: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def node_count(self) -> int:
        return self.n**self.dim

    @property
    def element_count(self) -> int:
        return self.elements.shape[0]

    @property
    def nloc(self) -> int:
        return self.dim + 1

    @cached_property
    def ref_mass(self) -> np.ndarray:
        """Local mass matrix divided by the element measure: (1 + delta_ij) / ((d+1)(d+2))."""
        d = self.dim
        return (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))

    @cached_property
    def ref_triple(self) -> np.ndarray:
        """``int phi_k phi_i phi_j`` divided by the element measure."""
        d = self.dim
        nl = d + 1
        out = np.empty((nl, nl, nl))
        for k in range(nl):
            for i in range(nl):
                for j in range(nl):
                    exps = np.bincount([k, i, j], minlength=nl)
                    num = factorial(d) * np.prod([factorial(int(e)) for e in exps])
                    out[k, i, j] = num / factorial(d + 3)
        return out

    @cached_property
    def pattern(self):
        """CSR sparsity pattern plus the map from local (e, a, b) entries to CSR slots."""
        from .kernels import build_pattern

        return build_pattern(self.elements, self.node_count)

    def __repr__(self):
        return f"PeriodicMesh(dim={self.dim}, n={self.n}, nodes={self.node_count}, elements={self.element_count})"


def build_mesh(dim: int, n: int) -> PeriodicMesh:
    """Build the uniform periodic mesh with ``n`` cells per axis."""
    if dim not in (1, 2):
        raise ValidationError(f"dim must be 1 or 2, got {dim!r}", field="dim")
    if int(n) != n or n < 2:
        raise ValidationError(f"n must be an integer >= 2, got {n!r}", field="n")
    n = int(n)
    h = 1.0 / n
    idx = np.arange(n)

    if dim == 1:
        nodes = (idx * h)[:, None]
        elements = np.stack([idx, (idx + 1) % n], axis=1)
        offsets = np.array([[[0.0], [h]]])
        anchors = nodes
    else:
        I, J = np.meshgrid(idx, idx, indexing="xy")  # I varies fastest along a row
        I = I.ravel()
        J = J.ravel()
        nodes = np.stack([I * h, J * h], axis=1)
        ll = I + n * J
        lr = (I + 1) % n + n * J
        ur = (I + 1) % n + n * ((J + 1) % n)
        ul = I + n * ((J + 1) % n)
        # element 2k is the lower triangle of square k, 2k+1 the upper one
        elements = np.empty((2 * n * n, 3), dtype=np.int64)
        elements[0::2] = np.stack([ll, lr, ur], axis=1)
        elements[1::2] = np.stack([ll, ur, ul], axis=1)
        lower = np.array([[0.0, 0.0], [h, 0.0], [h, h]])
        upper = np.array([[0.0, 0.0], [h, h], [0.0, h]])
        offsets = np.empty((2 * n * n, 3, 2))
        offsets[0::2] = lower
        offsets[1::2] = upper
        anchors = np.repeat(nodes, 2, axis=0)

    local_coords = anchors[:, None, :] + offsets
    local_coords = np.broadcast_to(local_coords, (elements.shape[0], dim + 1, dim)).copy()

    # gradients from the affine map x = x0 + B xi of the reference simplex
    B = np.swapaxes(local_coords[:, 1:, :] - local_coords[:, :1, :], 1, 2)  # (ne, d, d)
    Binv_T = np.swapaxes(np.linalg.inv(B), 1, 2)
    ref_grads = np.vstack([-np.ones((1, dim)), np.eye(dim)])  # (d+1, d)
    grads = np.einsum("aj,eij->eai", ref_grads, Binv_T)
    volumes = np.abs(np.linalg.det(B)) / factorial(dim)

    return PeriodicMesh(
        dim=dim,
        n=n,
        nodes=_frozen(nodes),
        elements=_frozen(elements.astype(np.int64)),
        local_coords=_frozen(local_coords),
        grads=_frozen(grads),
        volumes=_frozen(volumes),
    )


def _locate(mesh: PeriodicMesh, x):
    """Element index and barycentric weights for points ``x`` of shape (npts, d)."""
    n = mesh.n
    s = np.mod(np.asarray(x, dtype=float), 1.0) * n
    cell = np.floor(s).astype(np.int64)
    frac = s - cell
    cell %= n
    if mesh.dim == 1:
        elem = cell[:, 0]
        t = frac[:, 0]
        return elem, np.stack([1.0 - t, t], axis=1)
    sx, sy = frac[:, 0], frac[:, 1]
    square = cell[:, 0] + n * cell[:, 1]
    lower = sx >= sy
    elem = 2 * square + (~lower)
    w = np.where(
        lower[:, None],
        np.stack([1.0 - sx, sx - sy, sy], axis=1),
        np.stack([1.0 - sy, sx, sy - sx], axis=1),
    )
    return elem, w


def interpolate(mesh: PeriodicMesh, coeffs, points) -> np.ndarray:
    """Vectorised P1 evaluation of nodal ``coeffs`` at ``points`` (npts, d)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != mesh.dim:
        points = points.reshape(-1, mesh.dim)
    elem, w = _locate(mesh, points)
    c = np.asarray(coeffs, dtype=float)
    return np.einsum("pa,pa->p", w, c[mesh.elements[elem]])


def locate_and_interpolate(mesh: PeriodicMesh, field, x) -> float:
    """Value of the piecewise-linear field at the point ``x`` (wrapped onto the torus)."""
    coeffs = getattr(field, "coeffs", field)
    return float(interpolate(mesh, coeffs, np.reshape(np.asarray(x, dtype=float), (1, mesh.dim)))[0])
