"""Tests for polytopes, face lattices and generic directions."""
import itertools

import numpy as np
import pytest

from polyperturb.errors import (
    DegenerateInput,
    DegenerateSimplex,
    Empty,
    GenericityFailure,
    TooManyVertices,
    Unbounded,
)
from polyperturb.geometry import (
    Simplex,
    clip_points,
    cross_polytope,
    cube,
    first_generic,
    from_halfspaces,
    from_vertices,
    generic_direction,
    is_generic,
    regular_polygon,
    same_vertices,
    simplex,
    standard_simplex,
    triangulate,
)


def test_cube_representations():
    p = cube(3)

    assert p.dim == 3
    assert len(p.vertices) == 8
    assert len(p.offsets) == 6
    np.testing.assert_allclose(p.offsets, 1.0)
    assert p.volume == pytest.approx(8.0, abs=1e-12)


def test_interior_points_dropped():
    pts = list(itertools.product([-1, 1], repeat=2)) + [(0, 0), (0.5, 0.1), (1, 0)]
    p = from_vertices(pts)

    assert len(p.vertices) == 4
    assert len(p.offsets) == 4


def test_halfspaces_match_vertices():
    p = from_halfspaces(
        [([1, 0], 1), ([-1, 0], 1), ([0, 1], 1), ([0, -1], 1), ([1, 1], 10)]
    )

    # the redundant halfspace is removed
    assert len(p.offsets) == 4
    assert same_vertices(p, cube(2))


def test_halfspace_normals_are_normalised():
    p = from_halfspaces([([2, 0], 2), ([-3, 0], 3), ([0, 1], 1), ([0, -5], 5)])

    np.testing.assert_allclose(np.linalg.norm(p.normals, axis=1), 1.0)
    assert same_vertices(p, cube(2))


def test_unbounded_rejected():
    with pytest.raises(Unbounded):
        from_halfspaces([([1, 0], 1), ([0, 1], 1), ([0, -1], 1)])


def test_empty_rejected():
    with pytest.raises(Empty):
        from_halfspaces([([1, 0], -1), ([-1, 0], -1), ([0, 1], 1), ([0, -1], 1)])


def test_flat_rejected():
    with pytest.raises(DegenerateInput):
        from_vertices([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]])


def test_vertex_cap():
    pts = np.column_stack([np.cos(np.arange(70)), np.sin(np.arange(70))])

    with pytest.raises(TooManyVertices):
        from_vertices(pts)


def test_degenerate_simplex():
    with pytest.raises(DegenerateSimplex):
        Simplex([[0, 0], [1, 1], [2, 2]])


def test_face_lattice_counts():
    assert cube(3).faces.counts == {0: 8, 1: 12, 2: 6}
    assert cube(4).faces.counts == {0: 16, 1: 32, 2: 24, 3: 8}
    assert simplex(3).faces.counts == {0: 4, 1: 6, 2: 4}
    assert cross_polytope(3).faces.counts == {0: 6, 1: 12, 2: 8}
    assert regular_polygon(5).faces.counts == {0: 5, 1: 5}


def test_facets_indexed_like_halfspaces():
    p = cube(3)
    for i, face in enumerate(p.faces.facets):
        assert face.halfspace_ids == (i,)
        slack = face.points @ p.normals[i] - p.offsets[i]
        np.testing.assert_allclose(slack, 0.0, atol=1e-12)


def test_face_charts_are_isometric():
    p = cube(3)
    for face in p.faces.all_faces():
        np.testing.assert_allclose(face.basis.T @ face.basis, np.eye(face.dim), atol=1e-12)
        w = face.to_chart(face.points)
        np.testing.assert_allclose(face.from_chart(w), face.points, atol=1e-12)


def test_face_volumes():
    p = cube(3)
    assert [f.volume for f in p.faces.facets] == pytest.approx([4.0] * 6)
    assert [f.volume for f in p.faces.faces(1)] == pytest.approx([2.0] * 12)
    assert [f.volume for f in p.faces.faces(0)] == pytest.approx([1.0] * 8)


def test_subfaces_and_find():
    p = cube(3)
    facet = p.faces.facets[0]
    ridges = p.faces.subfaces(facet)

    assert len(ridges) == 4
    assert len(p.faces.subfaces(facet, 0)) == 4
    assert p.faces.find(reversed(facet.vertex_ids)) is facet
    assert p.faces.find([0, 7]) is None


@pytest.mark.parametrize("apex", [None, 0, 5])
def test_triangulation_volume(apex):
    p = cube(3, 2.0)
    simplices = triangulate(p, apex=apex)

    assert sum(s.volume for s in simplices) == pytest.approx(64.0, rel=1e-12)


def test_simplex_volumes():
    assert standard_simplex(3).volume == pytest.approx(1.0 / 6.0, rel=1e-12)
    assert simplex(2).volume == pytest.approx(np.sqrt(3) / 2, rel=1e-12)
    assert regular_polygon(6).volume == pytest.approx(3 * np.sqrt(3) / 2, rel=1e-12)


def test_transformed():
    p = cube(2)
    q = p.transformed(np.array([[2.0, 0.0], [1.0, 1.0]]), np.array([1.0, -1.0]))

    assert q.volume == pytest.approx(8.0, rel=1e-12)
    assert bool(q.contains(np.array([1.0, -1.0]))[0])
    # both representations were checked against each other on construction
    assert len(q.offsets) == 4


def test_contains():
    p = cube(2)
    mask = p.contains(np.array([[0, 0], [1, 1], [1.01, 0]]))

    assert mask.tolist() == [True, True, False]


def test_clip_points():
    square = cube(2).vertices
    half = clip_points(square, np.array([1.0, 0.0]), 0.0)
    q = from_vertices(half)

    assert q.volume == pytest.approx(2.0, rel=1e-12)
    assert clip_points(square, np.array([1.0, 0.0]), -2.0).shape[0] == 0


def test_generic_direction_is_deterministic():
    p = cube(3)
    v1 = generic_direction(p, seed=0)
    v2 = generic_direction(p, seed=0)

    np.testing.assert_array_equal(v1, v2)
    assert np.linalg.norm(v1) == pytest.approx(1.0)
    assert is_generic(p, v1)
    assert np.abs(p.normals @ v1).min() >= 1e-3


def test_generic_direction_rejects_orthogonal():
    p = cube(2)

    assert not is_generic(p, np.array([1.0, 0.0]))
    with pytest.raises(GenericityFailure):
        first_generic(p, [np.array([1.0, 0.0]), np.array([0.0, 2.0])])
    np.testing.assert_allclose(
        first_generic(p, [np.array([1.0, 0.0]), np.array([3.0, 4.0])]), [0.6, 0.8]
    )


def euler_characteristic(p) -> int:
    """Alternating sum of the proper face counts."""
    return sum((-1) ** k * count for k, count in p.faces.counts.items())


@pytest.mark.parametrize(
    "polytope",
    [cube(3), cube(4), simplex(3), simplex(4), cross_polytope(3), cross_polytope(4), regular_polygon(7)],
)
def test_face_lattice_satisfies_euler_relation(polytope):
    n = polytope.dim
    assert euler_characteristic(polytope) == 1 - (-1) ** n


@pytest.mark.parametrize("n,count", [(3, 12), (4, 14)])
def test_euler_relation_on_random_hulls(n, count):
    rng = np.random.default_rng(11 + n)
    p = from_vertices(rng.standard_normal((count, n)))

    assert euler_characteristic(p) == 1 - (-1) ** n
    assert p.faces.counts[0] == len(p.vertices)
    assert p.faces.counts[n - 1] == len(p.offsets)
