"""Tests for discrete perturbations, the families realising them and their diagnostics."""
import itertools
import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from polyperturb.errors import (
    ChartMismatch,
    DimensionMismatch,
    EdgeNotInFacet,
    NotGeneric,
    PolyPerturbError,
    RangeExceeded,
    ResolutionTooHigh,
)
from polyperturb.geometry import cube, from_vertices, same_vertices
from polyperturb.models import Grid, SlopeSample
from polyperturb.perturbation import (
    DensityKind,
    DiscretePerturbation,
    PiecewiseAffineDensity,
    build_family,
    canonical_density,
    compare_slopes,
    density_from_nodes,
    difference_measure_atoms,
    dihedral_angle,
    discretize_perturbation,
    family_at,
    hinge_angle,
    pair,
    reversible_basis,
    ridge_ids,
    wasserstein_diagnostic,
    weak_derivative_fd,
)
from polyperturb.polynomial import Polynomial
from polyperturb.quadrature import integrate_polytope, volume

T_GRID = [0.2, 0.1, 0.05]
ACCEPTANCE_GRID = [0.2, 0.1, 0.05, 0.025]
V = np.array([3.0, 1.0, 1.0]) / math.sqrt(11.0)


def facet_index(polytope, normal) -> int:
    normal = np.asarray(normal, dtype=float)
    (index,) = np.flatnonzero(np.abs(polytope.normals - normal).max(axis=1) < 1e-9)
    return int(index)


def ridge_on(polytope, facet: int, axis: int, value: float) -> int:
    """Ridge of the facet lying in the plane x_axis = value."""
    ridges = polytope.faces.faces(polytope.dim - 2)
    (edge,) = [
        k for k in ridge_ids(polytope, facet) if np.allclose(ridges[k].points[:, axis], value)
    ]
    return edge


def single(polytope, kind: DensityKind, facet: int, edge=None) -> DiscretePerturbation:
    return DiscretePerturbation(polytope, [canonical_density(polytope, kind, facet, edge)])


def hinge_beta(family, facet: int) -> float:
    density = family.perturbation.density(facet)
    g = family.polytope.faces.facets[facet].basis @ density.pieces[0, :-1]
    u = family.polytope.normals[facet]
    return float(g @ family.direction) / float(u @ family.direction)


def test_canonical_densities_on_cube_facet():
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    face = body.faces.facets[facet]
    centre = np.zeros(2)

    shift = canonical_density(body, DensityKind.SHIFT, facet)
    assert shift.is_affine
    assert shift.evaluate(centre)[0] == pytest.approx(1.0)

    edge = ridge_on(body, facet, 1, -1.0)
    hinge = canonical_density(body, DensityKind.HINGE, facet, edge)
    w = face.to_chart(np.array([[1.0, -1.0, 0.3], [1.0, 1.0, -0.5], [1.0, 0.2, 0.0]]))
    np.testing.assert_allclose(hinge.evaluate(w), [0.0, 2.0, 1.2], atol=1e-12)

    pyramid = canonical_density(body, DensityKind.PYRAMID, facet)
    assert len(pyramid.pieces) == 4
    w = face.to_chart(np.array([[1.0, 0.0, 0.0], [1.0, 0.5, -0.25], [1.0, 1.0, 1.0]]))
    np.testing.assert_allclose(pyramid.evaluate(w), [1.0, 0.5, 0.0], atol=1e-12)


def test_hinge_needs_an_edge_of_the_facet():
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    other = facet_index(body, [-1, 0, 0])

    with pytest.raises(EdgeNotInFacet):
        canonical_density(body, DensityKind.HINGE, facet)
    with pytest.raises(EdgeNotInFacet):
        canonical_density(body, DensityKind.HINGE, facet, ridge_ids(body, other)[0])


def test_pairing_with_canonical_densities():
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    one = Polynomial.constant(3, 1.0)
    y2 = Polynomial.monomial((0, 2, 0))

    assert pair(single(body, DensityKind.SHIFT, facet), one) == pytest.approx(4.0)
    assert pair(single(body, DensityKind.SHIFT, facet), y2) == pytest.approx(4.0 / 3.0)
    edge = ridge_on(body, facet, 1, -1.0)
    assert pair(single(body, DensityKind.HINGE, facet, edge), one) == pytest.approx(4.0)
    assert pair(single(body, DensityKind.PYRAMID, facet), one) == pytest.approx(4.0 / 3.0)

    with pytest.raises(DimensionMismatch):
        pair(single(body, DensityKind.SHIFT, facet), Polynomial.constant(2, 1.0))


def test_perturbation_validation():
    body = cube(3)

    with pytest.raises(PolyPerturbError):
        DiscretePerturbation(body, [PiecewiseAffineDensity(6, [[0.0, 0.0, 1.0]])])
    with pytest.raises(PolyPerturbError):
        DiscretePerturbation(
            body,
            [PiecewiseAffineDensity(0, [[0.0, 0.0, 1.0]]), PiecewiseAffineDensity(0, [[0.0, 0.0, 2.0]])],
        )
    with pytest.raises(ChartMismatch):
        DiscretePerturbation(body, [PiecewiseAffineDensity(0, [[0.0, 1.0]])])


def test_dominated_pieces_are_pruned():
    body = cube(3)
    mu = DiscretePerturbation(body, [PiecewiseAffineDensity(2, [[0.0, 0.0, 1.0], [0.0, 0.0, 5.0]])])

    np.testing.assert_array_equal(mu.density(2).pieces, [[0.0, 0.0, 1.0]])
    assert mu.is_reversible


def test_perturbation_arithmetic():
    body = cube(3)
    facet = facet_index(body, [0, 0, 1])
    shift = single(body, DensityKind.SHIFT, facet)
    pyramid = single(body, DensityKind.PYRAMID, facet)
    one = Polynomial.constant(3, 1.0)

    assert pair(shift + shift, one) == pytest.approx(8.0)
    assert pair(shift + pyramid, one) == pytest.approx(4.0 + 4.0 / 3.0)
    assert pair(-shift, one) == pytest.approx(-4.0)
    assert pair(pyramid.scaled(3.0), one) == pytest.approx(4.0)
    assert not pyramid.is_reversible
    assert (shift + (-shift)).is_zero()
    with pytest.raises(PolyPerturbError):
        -pyramid
    with pytest.raises(PolyPerturbError):
        pyramid.scaled(-1.0)


def test_reversible_basis():
    body = cube(2)
    basis = reversible_basis(body)

    assert len(basis) == 4 * 2
    assert all(mu.is_reversible for mu in basis)
    assert [list(mu.densities) for mu in basis[:3]] == [[0], [0], [1]]


def test_density_from_nodes_tent():
    body = cube(3)
    facet = facet_index(body, [0, -1, 0])
    face = body.faces.facets[facet]
    corners = face.to_chart(face.points)
    ring = corners[ConvexHull(corners).vertices]
    simplices = np.array(
        [[np.zeros(2), ring[k], ring[(k + 1) % 4]] for k in range(4)]
    )
    values = np.tile([1.0, 0.0, 0.0], (4, 1))

    density = density_from_nodes(body, facet, simplices, values)
    assert len(density.pieces) == 4
    np.testing.assert_allclose(density.evaluate(ring), 0.0, atol=1e-12)
    assert density.evaluate(np.zeros(2))[0] == pytest.approx(1.0)
    mu = DiscretePerturbation(body, [density])
    assert pair(mu, Polynomial.constant(3, 1.0)) == pytest.approx(4.0 / 3.0)

    with pytest.raises(DimensionMismatch):
        density_from_nodes(body, facet, simplices, values[:, :2])


def test_density_from_nodes_affine_collapses():
    body = cube(3)
    facet = facet_index(body, [0, 0, -1])
    face = body.faces.facets[facet]
    corners = face.to_chart(face.points)
    ring = corners[ConvexHull(corners).vertices]
    simplices = np.array([ring[:3], ring[[0, 2, 3]]])
    values = simplices @ np.array([0.5, -1.0]) + 2.0

    density = density_from_nodes(body, facet, simplices, values)
    np.testing.assert_allclose(density.pieces, [[0.5, -1.0, 2.0]], atol=1e-12)


def test_shift_family_is_the_slab():
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    family = build_family(body, single(body, DensityKind.SHIFT, facet), V)

    assert family.t_max == 1.0
    assert set(family.plus) | set(family.minus) == set(range(6))
    for t in T_GRID:
        slab = from_vertices([[x, y, z] for x in (-1, 1 + t) for y in (-1, 1) for z in (-1, 1)])
        assert same_vertices(family_at(family, t), slab)

    assert same_vertices(family_at(family, 0.0), body)


@pytest.mark.parametrize(
    "exponents",
    [(0, 0, 0), (0, 2, 0), (0, 1, 1), (0, 2, 2), (0, 0, 4)],
)
def test_shift_quotient_is_exact_without_x1(exponents):
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    mu = single(body, DensityKind.SHIFT, facet)
    p = Polynomial.monomial(exponents)
    family = build_family(body, mu, V)

    comparison = compare_slopes(weak_derivative_fd(family, p, T_GRID), pair(mu, p))
    assert max(comparison.errors) < 1e-10


@pytest.mark.parametrize("exponents", [(1, 0, 0), (2, 0, 0), (1, 2, 0), (3, 0, 0)])
def test_shift_quotient_converges_linearly(exponents):
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    mu = single(body, DensityKind.SHIFT, facet)
    p = Polynomial.monomial(exponents)
    family = build_family(body, mu, V)

    comparison = compare_slopes(weak_derivative_fd(family, p, T_GRID), pair(mu, p))
    assert comparison.errors == sorted(comparison.errors, reverse=True)
    for ratio in comparison.ratios:
        assert 1.5 <= ratio <= 2.5


def test_shift_quotient_of_x1_is_exact_linear():
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    mu = single(body, DensityKind.SHIFT, facet)
    family = build_family(body, mu, V)

    samples = weak_derivative_fd(family, Polynomial.coordinate(3, 0), T_GRID)
    # int_{[1, 1 + t]} x dx * 4 / t = 4 + 2t
    np.testing.assert_allclose([s.quotient for s in samples], [4 + 2 * t for t in T_GRID], rtol=1e-12)
    comparison = compare_slopes(samples, 4.0)
    assert comparison.ratios == [pytest.approx(2.0), pytest.approx(2.0)]


def test_hinge_volume_and_ratio():
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    edge = ridge_on(body, facet, 1, -1.0)
    mu = single(body, DensityKind.HINGE, facet, edge)
    family = build_family(body, mu, V)
    beta = hinge_beta(family, facet)
    assert abs(beta) == pytest.approx(1.0 / 3.0)

    for t in T_GRID:
        assert volume(family_at(family, t)) == pytest.approx(8.0 + 4.0 * t / (1.0 + t * beta))

    comparison = compare_slopes(
        weak_derivative_fd(family, Polynomial.constant(3, 1.0), T_GRID), pair(mu, Polynomial.constant(3, 1.0))
    )
    assert comparison.target == pytest.approx(4.0)
    for (t, _), ratio in zip(comparison.samples, comparison.ratios):
        expected = 2.0 * (1.0 + t * beta / 2.0) / (1.0 + t * beta)
        assert ratio == pytest.approx(expected, rel=1e-8)
        assert 1.5 <= ratio <= 2.5


@pytest.mark.parametrize("t", [0.05, 0.2, 0.5])
def test_hinge_angle_is_arcsin_for_tuned_direction(t):
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    edge = ridge_on(body, facet, 1, -1.0)
    mu = single(body, DensityKind.HINGE, facet, edge)
    v = np.array([1.0, -(1.0 - math.sqrt(1.0 - t * t)) / t, 0.3])
    family = build_family(body, mu, v)

    assert hinge_angle(family, facet, t) == pytest.approx(math.asin(t), rel=1e-12)

    tilted = family_at(family, t)
    e1 = np.array([1.0, 0.0, 0.0])
    (normal,) = [u for u in tilted.normals if 0.5 < u @ e1 < 1.0 - 1e-9]
    assert dihedral_angle(e1, normal) == pytest.approx(math.asin(t), rel=1e-9)


def test_dihedral_angle():
    e1, e2 = np.eye(2)

    assert dihedral_angle(e1, e2) == pytest.approx(math.pi / 2)
    assert dihedral_angle(e1, 3 * e1) == pytest.approx(0.0)
    assert dihedral_angle(e1, -e1) == pytest.approx(math.pi)


def test_pyramid_family():
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    mu = single(body, DensityKind.PYRAMID, facet)
    family = build_family(body, mu, V)
    one = Polynomial.constant(3, 1.0)

    roof = family_at(family, 0.2)
    assert len(roof.vertices) == 9
    assert volume(roof) == pytest.approx(8.0 + 0.2 * 4.0 / 3.0)

    comparison = compare_slopes(weak_derivative_fd(family, one, T_GRID), pair(mu, one))
    assert max(comparison.errors) < 1e-10
    assert comparison.ratios == [None, None]


def test_pyramid_on_top_facet_tracks_the_normal_coordinate():
    body = cube(3)
    facet = facet_index(body, [0, 0, 1])
    mu = single(body, DensityKind.PYRAMID, facet)
    family = build_family(body, mu, V)
    x3 = Polynomial.coordinate(3, 2)

    assert pair(mu, x3) == pytest.approx(4.0 / 3.0)
    # the stacked pyramid has height t, so int x3 over it is t (4/3 + t/3)
    samples = weak_derivative_fd(family, x3, ACCEPTANCE_GRID)
    np.testing.assert_allclose(
        [s.quotient for s in samples], [4.0 / 3.0 + t / 3.0 for t in ACCEPTANCE_GRID], rtol=1e-10
    )
    comparison = compare_slopes(samples, pair(mu, x3))
    assert comparison.ratios == [pytest.approx(2.0)] * 3


def expected_convergence(kind: DensityKind, exponents) -> str:
    """
    How the quotient approaches pair(mu, p) for densities on the facet x1 = 1
    (hinge about the edge x2 = -1) moved along V.
    """
    a, b, c = exponents
    if kind is DensityKind.SHIFT:
        # the slab [1, 1 + t] only sees x1; odd powers of x2, x3 integrate to 0
        return "exact" if a == 0 or b % 2 or c % 2 else "linear"
    if kind is DensityKind.HINGE:
        return "exact" if c % 2 else "linear"
    if exponents == (0, 0, 0):
        return "exact"
    # the first-order term is odd in the chart of the square and cancels
    if b % 2 and c % 2 or (a == 0 and not b % 2 and not c % 2):
        return "quadratic"
    return "linear"


MONOMIALS = [e for e in itertools.product(range(4), repeat=3) if sum(e) <= 3]


@pytest.mark.parametrize("exponents", MONOMIALS)
@pytest.mark.parametrize("kind", list(DensityKind))
def test_canonical_densities_converge_for_low_degree_monomials(kind, exponents):
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    edge = ridge_on(body, facet, 1, -1.0) if kind is DensityKind.HINGE else None
    mu = single(body, kind, facet, edge)
    p = Polynomial.monomial(exponents)
    family = build_family(body, mu, V)

    comparison = compare_slopes(weak_derivative_fd(family, p, ACCEPTANCE_GRID), pair(mu, p))
    behaviour = expected_convergence(kind, exponents)
    if behaviour == "exact":
        assert max(comparison.errors) < 1e-10
        return

    low, high = (1.5, 2.5) if behaviour == "linear" else (3.5, 4.5)
    for ratio in comparison.ratios:
        assert low <= ratio <= high


def test_pairing_above_the_input_degree_cap():
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    edge = ridge_on(body, facet, 1, -1.0)
    x1 = Polynomial.coordinate(3, 0)

    # x1 = 1 on the facet and the hinge density integrates to 4
    assert pair(single(body, DensityKind.HINGE, facet, edge), x1**8) == pytest.approx(4.0)
    assert pair(single(body, DensityKind.PYRAMID, facet), x1**8) == pytest.approx(4.0 / 3.0)
    with pytest.raises(PolyPerturbError):
        pair(single(body, DensityKind.HINGE, facet, edge), x1**9)

    shift = single(body, DensityKind.SHIFT, facet)
    (sample,) = weak_derivative_fd(build_family(body, shift, V), x1**8, [0.1])
    assert sample.quotient == pytest.approx(4.0 * (1.1**9 - 1.0) / 0.9, rel=1e-10)


@pytest.mark.parametrize("kind", list(DensityKind))
def test_family_of_a_scaled_perturbation_is_reparametrised(kind):
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    edge = ridge_on(body, facet, 1, -1.0) if kind is DensityKind.HINGE else None
    mu = single(body, kind, facet, edge)

    family = build_family(body, mu, V)
    for scale in (0.5, 2.0, 3.0):
        scaled = build_family(body, mu.scaled(scale), V)
        for t in (0.02, 0.05):
            assert same_vertices(scaled.evaluate(t), family.evaluate(scale * t), tol=1e-9)


def test_fd_threads_agree():
    body = cube(3)
    facet = facet_index(body, [0, 1, 0])
    mu = single(body, DensityKind.PYRAMID, facet)
    family = build_family(body, mu, V)
    p = Polynomial(3, {(1, 1, 0): 1.0, (0, 2, 0): 2.0})

    assert weak_derivative_fd(family, p, T_GRID, threads=3) == weak_derivative_fd(family, p, T_GRID)
    with pytest.raises(PolyPerturbError):
        weak_derivative_fd(family, p, [0.1, 0.0])


def test_family_range_and_direction():
    body = cube(3)
    facet = facet_index(body, [1, 0, 0])
    mu = single(body, DensityKind.SHIFT, facet)

    with pytest.raises(NotGeneric):
        build_family(body, mu, [1.0, 0.0, 0.0])

    family = build_family(body, mu, V)
    with pytest.raises(RangeExceeded):
        family_at(family, 1.5)
    with pytest.raises(RangeExceeded):
        family_at(family, -0.1)


def test_shrinking_family_has_limited_range():
    body = cube(2)
    facet = facet_index(body, [1, 0])
    mu = -single(body, DensityKind.SHIFT, facet)
    family = build_family(body, mu, [2.0, 1.0])

    # the square collapses at t = 2
    assert family.t_max == 1.0
    assert volume(family_at(family, 0.5)) == pytest.approx(3.0)


def test_family_matches_integration_of_moved_body():
    body = cube(2)
    facet = facet_index(body, [0, 1])
    mu = single(body, DensityKind.SHIFT, facet)
    family = build_family(body, mu, [1.0, 3.0])
    y = Polynomial.coordinate(2, 1)

    (sample,) = weak_derivative_fd(family, y, [0.1])
    expected = (integrate_polytope(y, family_at(family, 0.1)) - integrate_polytope(y, body)) / 0.1
    assert sample.quotient == pytest.approx(expected)
    # int_{[1, 1.1]} y dy * 2 / 0.1
    assert sample.quotient == pytest.approx(2.0 * 1.05)


def test_compare_slopes():
    samples = [SlopeSample(0.2, 4.4), SlopeSample(0.1, 4.2), SlopeSample(0.05, 4.1)]
    comparison = compare_slopes(samples, 4.0)

    assert comparison.errors == pytest.approx([0.4, 0.2, 0.1])
    assert comparison.ratios == [pytest.approx(2.0), pytest.approx(2.0)]

    exact = compare_slopes([SlopeSample(0.2, 4.0), SlopeSample(0.1, 4.0)], 4.0)
    assert exact.ratios == [None]


def test_difference_measure_atoms():
    body = cube(2)
    facet = facet_index(body, [1, 0])
    family = build_family(body, single(body, DensityKind.SHIFT, facet), [2.0, 1.0])
    moved = family_at(family, 0.2)

    atoms = difference_measure_atoms(body, moved, 8)
    assert atoms.mass == pytest.approx(0.4)
    assert atoms.is_positive
    assert (atoms.points[:, 0] > 1.0).all()

    back = difference_measure_atoms(moved, body, 8)
    assert back.mass == pytest.approx(-0.4)

    with pytest.raises(ResolutionTooHigh):
        difference_measure_atoms(body, moved, 100)


def test_discretize_perturbation_keeps_mass():
    body = cube(3)
    facet = facet_index(body, [0, 0, 1])
    mu = single(body, DensityKind.PYRAMID, facet) + single(body, DensityKind.SHIFT, facet_index(body, [1, 0, 0]))
    grid = Grid.around(body.vertices, 4)

    atoms = discretize_perturbation(mu, grid)
    assert atoms.mass == pytest.approx(4.0 / 3.0 + 4.0)
    # 16 cells per facet, 4 shared along the common edge
    assert len(atoms) == 28


def test_wasserstein_diagnostic_decreases():
    body = cube(2)
    facet = facet_index(body, [1, 0])
    family = build_family(body, single(body, DensityKind.SHIFT, facet), [2.0, 1.0])

    first, last = wasserstein_diagnostic(family, [0.2, 0.025], 32)
    assert (first.t, last.t) == (0.2, 0.025)
    assert first.distance > 0.0
    assert last.distance <= 0.6 * first.distance

    with pytest.raises(ResolutionTooHigh):
        wasserstein_diagnostic(family, [0.1], 65)


def test_clipped_family_starts_at_the_polytope():
    body = cube(2)
    facet = facet_index(body, [0, 1])
    family = build_family(body, single(body, DensityKind.PYRAMID, facet), [1.0, 3.0], clip_to_shadow=True)

    assert family.clip_to_shadow
    assert same_vertices(family_at(family, 0.0), body)
    assert family.shadow.dim == 1
