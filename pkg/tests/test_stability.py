"""Tests for the boundary inner product, cone projection and stability reports."""
import io
import math

import numpy as np
import pytest
from scipy.optimize import minimize

from polyperturb.errors import DimensionMismatch, NotIsotropic, TriangulationMismatch
from polyperturb.geometry import cube, from_vertices, simplex
from polyperturb.isotropy import CompositeMomentFunctional, evaluate, h_function, to_isotropic
from polyperturb.models import Verdict
from polyperturb.perturbation import build_family, family_at
from polyperturb.polynomial import Polynomial
from polyperturb.stability import (
    BoundaryFunction,
    ConeElement,
    FaceMesh,
    NodalValues,
    boundary_inner_product,
    facet_cone_projection,
    facet_moment_condition,
    first_order_crosscheck,
    lower_face_search,
    project_concave,
    reversible_check,
    stability_report,
    write_residuals_csv,
)

SQRT3 = math.sqrt(3.0)


def facet_index(polytope, normal) -> int:
    normal = np.asarray(normal, dtype=float)
    (index,) = np.flatnonzero(np.abs(polytope.normals - normal).max(axis=1) < 1e-9)
    return int(index)


def quadrilateral():
    body, _ = to_isotropic(from_vertices([[0, 0], [2, 0], [2.5, 1], [0, 1.5]]))
    return body


def lk(n: int) -> CompositeMomentFunctional:
    return CompositeMomentFunctional.isotropic_constant(n)


def m_product(mesh, f, g) -> float:
    return float(f @ mesh.mass @ g)


@pytest.mark.parametrize("refinement", [1, 2, 3])
def test_face_mesh_of_square_facet(refinement):
    body = cube(3)
    mesh = FaceMesh(body.faces.facets[0], refinement)

    # fan of four triangles from the facet centre
    assert len(mesh) == 2 * refinement**2 + 2 * refinement + 1
    assert len(mesh.simplices) == 4 * refinement**2
    assert len(mesh.hinges) == 6 * refinement**2 - 2 * refinement
    assert mesh.volumes().sum() == pytest.approx(4.0)
    assert mesh.mass.sum() == pytest.approx(4.0)


def test_face_mesh_of_segment():
    body = cube(2)
    mesh = FaceMesh(body.faces.facets[facet_index(body, [1, 0])], 4)

    assert len(mesh) == 5
    assert len(mesh.hinges) == 3
    assert mesh.mass.sum() == pytest.approx(2.0)

    y = Polynomial.coordinate(2, 1)
    assert mesh.max_hinge(mesh.interpolate(-(y * y))) <= 1e-12
    assert mesh.max_hinge(mesh.interpolate(y * y)) > 0.0
    assert mesh.max_hinge(mesh.interpolate(3 * y + 1)) == pytest.approx(0.0, abs=1e-12)

    # int_{-1}^{1} (1 + y^2) dy
    assert mesh.load(1 + y * y).sum() == pytest.approx(8.0 / 3.0)


def test_face_mesh_rejects_vertices():
    with pytest.raises(TriangulationMismatch):
        FaceMesh(cube(2).faces.faces(0)[0], 2)


def test_boundary_inner_product_examples():
    body = cube(3)
    one = Polynomial.constant(3, 1.0)
    facets = BoundaryFunction.from_polynomial(body, one, dims=[2])
    assert boundary_inner_product(facets, facets) == pytest.approx(24.0)

    face = body.faces.facets[facet_index(body, [1, 0, 0])]
    f = BoundaryFunction(body, {face.vertex_ids: one})
    g = BoundaryFunction(body, {face.vertex_ids: Polynomial.coordinate(3, 1)})
    assert boundary_inner_product(f, g) == pytest.approx(0.0, abs=1e-12)

    vertices = BoundaryFunction.from_polynomial(body, one, dims=[0])
    assert boundary_inner_product(vertices, vertices) == pytest.approx(8.0)
    assert boundary_inner_product(vertices, facets) == 0.0


def test_boundary_inner_product_on_isotropic_cube_facet():
    body = cube(3, SQRT3)
    face = body.faces.facets[0]
    f = BoundaryFunction(body, {face.vertex_ids: Polynomial.norm_squared(3) - 5})
    g = BoundaryFunction(body, {face.vertex_ids: Polynomial.constant(3, 1.0)})

    assert boundary_inner_product(f, g) == pytest.approx(0.0, abs=1e-9)


def test_boundary_inner_product_with_node_values():
    body = cube(3)
    face = body.faces.facets[facet_index(body, [0, 0, 1])]
    mesh = FaceMesh(face, 2)
    y = Polynomial.coordinate(3, 1)
    nodal = NodalValues(mesh, mesh.interpolate(1 + y))

    f = BoundaryFunction(body, {face.vertex_ids: nodal})
    g = BoundaryFunction(body, {face.vertex_ids: y})
    # int (1 + y) y and int (1 + y)^2 over [-1, 1]^2
    assert boundary_inner_product(f, g) == pytest.approx(4.0 / 3.0)
    assert boundary_inner_product(f, f) == pytest.approx(16.0 / 3.0)
    assert f.norm() == pytest.approx(math.sqrt(16.0 / 3.0))


def test_boundary_function_validation():
    body = cube(3)
    face = body.faces.facets[0]

    with pytest.raises(TriangulationMismatch):
        BoundaryFunction(body, {(0, 7): Polynomial.constant(3, 1.0)})
    with pytest.raises(TriangulationMismatch):
        BoundaryFunction(body, {face.vertex_ids: NodalValues(FaceMesh(face, 2), np.ones(3))})
    with pytest.raises(TriangulationMismatch):
        other = body.faces.facets[1]
        BoundaryFunction(body, {other.vertex_ids: NodalValues(FaceMesh(face, 1), np.ones(5))})
    with pytest.raises(DimensionMismatch):
        BoundaryFunction(body, {face.vertex_ids: Polynomial.constant(2, 1.0)})


@pytest.mark.parametrize("n", [2, 3])
def test_reversible_residuals_vanish_on_isotropic_cube(n):
    body = cube(n, SQRT3)
    residuals = reversible_check(body, lk(n))

    assert len(residuals) == 2 * n
    for r in residuals:
        assert len(r.raw) == n + 1
        assert len(r.projected) == n
        assert r.norm < 1e-9
    for condition in facet_moment_condition(body):
        np.testing.assert_allclose(condition, 0.0, atol=1e-9)


def test_reversible_residuals_vanish_on_isotropic_triangle():
    body, _ = to_isotropic(simplex(2))

    assert max(r.norm for r in reversible_check(body, lk(2))) < 1e-9


def test_reversible_residuals_of_quadrilateral():
    body = quadrilateral()
    vol = body.volume
    residuals = reversible_check(body, lk(2))

    # h vol^3 = |x|^2 - 4
    assert max(r.norm for r in residuals) * vol**3 > 1e-4
    assert max(np.abs(c).max() for c in facet_moment_condition(body)) > 1e-4


def test_reversible_check_needs_isotropy():
    with pytest.raises(NotIsotropic):
        reversible_check(cube(2), lk(2))


def test_project_concave_zero():
    body = cube(2)
    mesh = FaceMesh(body.faces.facets[0], 4)

    g, cycles, residual = project_concave(mesh, np.zeros(len(mesh)))
    np.testing.assert_array_equal(g, 0.0)
    assert cycles == 0 and residual == 0.0


def test_project_concave_fixed_point():
    body = cube(3)
    mesh = FaceMesh(body.faces.facets[2], 3)
    x = Polynomial.norm_squared(3)
    values = mesh.interpolate(-x)

    g, _, _ = project_concave(mesh, mesh.mass @ values)
    np.testing.assert_allclose(g, values, atol=1e-9)


def test_project_concave_matches_dense_qp():
    body = cube(2, SQRT3)
    mesh = FaceMesh(body.faces.facets[facet_index(body, [1, 0])], 12)
    assert len(mesh) <= 20
    rng = np.random.default_rng(17)

    for _ in range(10):
        h = rng.standard_normal(len(mesh))
        g, _, _ = project_concave(mesh, mesh.mass @ h)

        oracle = minimize(
            lambda x: m_product(mesh, x - h, x - h),
            np.zeros(len(mesh)),
            jac=lambda x: 2.0 * mesh.mass @ (x - h),
            constraints=[
                {"type": "ineq", "fun": lambda x: -mesh.hinges @ x, "jac": lambda x: -mesh.hinges}
            ],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 1000},
        )
        assert oracle.success
        ours = m_product(mesh, g - h, g - h)
        assert ours == pytest.approx(oracle.fun, abs=1e-6)
        assert mesh.max_hinge(g) <= 1e-6


def test_projection_variational_inequality():
    body = cube(2, SQRT3)
    mesh = FaceMesh(body.faces.facets[0], 8)
    rng = np.random.default_rng(2)
    h = rng.standard_normal(len(mesh))
    g, _, _ = project_concave(mesh, mesh.mass @ h)
    scale = math.sqrt(m_product(mesh, h, h))

    assert abs(m_product(mesh, h - g, g)) <= 1e-6 * scale**2
    w = mesh.nodes[:, 0]
    for _ in range(100):
        # min of random affine functions is concave
        pieces = rng.standard_normal((3, 2))
        cone = (np.outer(w, pieces[:, 0]) + pieces[:, 1]).min(axis=1)
        cone /= math.sqrt(m_product(mesh, cone, cone))
        assert m_product(mesh, h - g, cone) <= 1e-6 * scale


def test_facet_cone_projection_of_square_lk():
    body = cube(2, SQRT3)
    h = BoundaryFunction.from_polynomial(body, h_function(lk(2), body))

    objective, element, projections = facet_cone_projection(body, h, refinement=4)
    assert len(projections) == 4
    assert objective == pytest.approx(sum(p.objective for p in projections), abs=1e-12)
    # h is convex on every facet with vanishing affine moments
    assert element.norm() <= 1e-6 * h.norm()
    assert element.max_hinge() <= 1e-9

    threaded = facet_cone_projection(body, h, refinement=4, threads=2)[0]
    assert threaded == pytest.approx(objective, abs=1e-15)


def test_facet_cone_projection_of_zero():
    body = cube(3)
    objective, element, _ = facet_cone_projection(body, BoundaryFunction(body, {}), refinement=2)

    assert objective == 0.0
    assert element.is_zero()


def test_lower_face_search_on_isotropic_cube():
    body = cube(3, SQRT3)
    h = BoundaryFunction.from_polynomial(body, h_function(lk(3), body))

    certificates = lower_face_search(body, h, restarts=2, seed=1)
    assert len(certificates) == 8 + 12
    # h > 0 on every vertex and edge: no direction pairs positively
    assert all(c.pairing < 0 for c in certificates[:8])
    assert all(c.pairing <= 1e-12 for c in certificates[8:])
    assert [c.dim for c in certificates] == [0] * 8 + [1] * 12


def test_vertex_certificate():
    body = cube(2)
    h = BoundaryFunction.from_polynomial(body, Polynomial.constant(2, -1.0), dims=[0])

    certificates = lower_face_search(body, h)
    assert [c.pairing for c in certificates] == [1.0] * 4
    assert all(c.a == [] for c in certificates)


def test_square_is_weakly_stable():
    body = cube(2, SQRT3)
    report = stability_report(body, lk(2), refinement=4, restarts=4)

    assert report.verdict is Verdict.WEAKLY_STABLE
    assert report.certificate is None
    assert report.direction is None
    assert report.max_residual < 1e-7
    assert report.functional == "lk"
    assert (report.refinement, report.restarts) == (4, 4)


def test_volume_is_unstable_everywhere():
    body = cube(2)
    report = stability_report(body, CompositeMomentFunctional.volume(2), refinement=2, restarts=2)

    assert report.verdict is Verdict.UNSTABLE
    assert report.certificate == "facet"
    assert report.pairing > 0


def test_stalled_projection_is_inconclusive():
    body = cube(2, SQRT3)
    report = stability_report(
        body, lk(2), refinement=4, restarts=2, kkt_tol=1e-15, max_projection_iter=1
    )

    assert report.verdict is Verdict.INCONCLUSIVE
    assert report.projections == []
    assert math.isnan(report.projection_objective)


def test_stability_report_needs_isotropy():
    with pytest.raises(NotIsotropic):
        stability_report(cube(2), lk(2))


def test_quadrilateral_is_unstable_and_the_certificate_increases_lk():
    body = quadrilateral()
    phi = lk(2)
    report = stability_report(body, phi, refinement=4, restarts=4)

    assert report.verdict is Verdict.UNSTABLE
    assert report.certificate == "facet"
    g = report.direction
    assert g.max_hinge() <= 1e-7 * max(1.0, g.norm())

    comparison = first_order_crosscheck(body, phi, g, [0.01, 0.0025])
    target = comparison.target
    assert target > 0
    first, second = comparison.samples
    assert first.quotient > 0
    assert abs(first.quotient - target) <= 0.2 * target
    assert abs(second.quotient - target) <= 0.05 * target


def test_certificate_scaling():
    body = quadrilateral()
    phi = lk(2)
    h = BoundaryFunction.from_polynomial(body, h_function(phi, body))
    _, element, _ = facet_cone_projection(body, h, refinement=3)
    scaled = BoundaryFunction.from_polynomial(body, 5.0 * h_function(phi, body))
    _, scaled_element, _ = facet_cone_projection(body, scaled, refinement=3)

    for i, v in element.facets.items():
        np.testing.assert_allclose(scaled_element.facets[i].values, 5.0 * v.values, atol=1e-9)


def test_crosscheck_of_zero_direction():
    body = cube(2, SQRT3)
    comparison = first_order_crosscheck(body, lk(2), ConeElement(body, {}), [0.1, 0.05])

    assert comparison.target == 0.0
    assert max(comparison.errors) < 1e-12


def test_crosscheck_of_shift_is_critical():
    body = cube(2, SQRT3)
    facet = facet_index(body, [1, 0])
    mesh = FaceMesh(body.faces.facets[facet], 2)
    g = ConeElement(body, {facet: NodalValues(mesh, np.ones(len(mesh)))})

    comparison = first_order_crosscheck(body, lk(2), g, [0.2, 0.1, 0.05])
    assert comparison.target == pytest.approx(0.0, abs=1e-12)
    # rectangles have the isotropic constant of the square
    assert max(comparison.errors) < 1e-10


def test_crosscheck_of_tilted_density():
    body = cube(2)
    phi = CompositeMomentFunctional.moment_of_inertia(2)
    facet = facet_index(body, [1, 0])
    mesh = FaceMesh(body.faces.facets[facet], 2)
    g = ConeElement(body, {facet: NodalValues(mesh, 1.0 + 0.5 * mesh.nodes[:, 0])})

    comparison = first_order_crosscheck(body, phi, g, [0.2, 0.1, 0.05], v=[2.0, 1.0])
    # int_{-1}^{1} (1 + y^2)(1 +- y / 2) dy
    assert comparison.target == pytest.approx(8.0 / 3.0)
    for ratio in comparison.ratios:
        assert 1.5 <= ratio <= 2.5

    mu = g.to_perturbation()
    family = build_family(body, mu, [2.0, 1.0])
    grown = evaluate(phi, family_at(family, 0.05))
    assert grown > evaluate(phi, body)


def test_residuals_csv():
    body = cube(2, SQRT3)
    report = stability_report(body, lk(2), refinement=2, restarts=1)
    out = io.StringIO()
    write_residuals_csv(report, out)

    lines = out.getvalue().splitlines()
    assert lines[0] == (
        "facet,norm,raw_0,raw_1,raw_2,projected_0,projected_1,objective,pairing"
    )
    assert len(lines) == 5
    assert [line.split(",")[0] for line in lines[1:]] == ["0", "1", "2", "3"]
