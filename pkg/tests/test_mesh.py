import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfg_stable import ValidationError, build_mesh
from mfg_stable.fem import assemble_mass
from mfg_stable.mesh import interpolate, locate_and_interpolate


def test_1d_mesh_counts():
    mesh = build_mesh(1, 4)
    assert mesh.node_count == 4
    assert mesh.element_count == 4
    assert mesh.h == 0.25


def test_2d_mesh_counts_and_area():
    mesh = build_mesh(2, 4)
    assert mesh.node_count == 16
    assert mesh.element_count == 32
    assert mesh.volumes.sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("dim, n", [(3, 4), (0, 4), (1, 1), (2, 2.5)])
def test_invalid_arguments(dim, n):
    with pytest.raises(ValidationError):
        build_mesh(dim, n)


@pytest.mark.parametrize("dim", [1, 2])
@pytest.mark.parametrize("n", [2, 3, 8])
def test_element_invariants(dim, n):
    mesh = build_mesh(dim, n)
    expected = mesh.h if dim == 1 else mesh.h**2 / 2
    np.testing.assert_allclose(mesh.volumes, expected, rtol=1e-14)
    for el in mesh.elements:
        assert len(set(el)) == dim + 1
    assert set(np.unique(mesh.elements)) == set(range(mesh.node_count))


def test_2d_diagonal_orientation():
    mesh = build_mesh(2, 4)
    # element 0 is (lower-left, lower-right, upper-right) of the first square
    np.testing.assert_allclose(mesh.local_coords[0], [[0, 0], [0.25, 0], [0.25, 0.25]])
    np.testing.assert_allclose(mesh.local_coords[1], [[0, 0], [0.25, 0.25], [0, 0.25]])


def test_arrays_are_read_only():
    mesh = build_mesh(2, 3)
    with pytest.raises(ValueError):
        mesh.nodes[0, 0] = 1.0


def test_interpolation_examples():
    mesh = build_mesh(1, 2)
    assert locate_and_interpolate(mesh, np.array([0.0, 1.0]), 0.25) == pytest.approx(0.5)
    assert locate_and_interpolate(mesh, np.array([0.0, 1.0]), 0.75) == pytest.approx(0.5)


def test_affine_reproduction_2d():
    mesh = build_mesh(2, 8)
    values = mesh.nodes.sum(axis=1)
    pts = np.array([[0.1, 0.2], [0.33, 0.41], [0.52, 0.7], [0.8, 0.1]])
    np.testing.assert_allclose(interpolate(mesh, values, pts), pts.sum(axis=1), atol=1e-14)


@given(
    dim=st.sampled_from([1, 2]),
    n=st.integers(2, 9),
    c=st.floats(-1e3, 1e3, allow_nan=False),
    x=st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=2, max_size=2),
)
@settings(max_examples=50, deadline=None)
def test_constants_reproduced_everywhere(dim, n, c, x):
    mesh = build_mesh(dim, n)
    val = locate_and_interpolate(mesh, np.full(mesh.node_count, c), np.array(x[:dim]))
    assert val == pytest.approx(c, rel=1e-13, abs=1e-13)


@given(dim=st.sampled_from([1, 2]), n=st.integers(2, 12))
@settings(max_examples=25, deadline=None)
def test_partition_of_unity(dim, n):
    mesh = build_mesh(dim, n)
    M = assemble_mass(mesh)
    assert abs(np.ones(mesh.node_count) @ (M @ np.ones(mesh.node_count)) - 1.0) < 1e-14


def test_periodicity_of_interpolation():
    mesh = build_mesh(2, 5)
    vals = np.random.default_rng(0).standard_normal(mesh.node_count)
    p = np.array([[0.13, 0.77]])
    np.testing.assert_allclose(interpolate(mesh, vals, p), interpolate(mesh, vals, p + [1.0, -2.0]), atol=1e-14)
