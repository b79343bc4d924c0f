import numpy as np
import pytest

from stages.stage1_scherk import narrowest_hole_half_width, surface_point
from stages.stage2_transforms import pulled_geometry
from stages.stage3_discretize import symmetric_projector
from stages.stage4_graphgeom import (
    embeddedness_check,
    graph_operator,
    graph_sample,
    graph_surface,
    intersection_scan,
    rescaled_residual,
    residual_F,
)
from utils.errors import InvalidParameterError, OutOfDomainError


def symmetric_field(mesh, amplitude, seed):
    projector = symmetric_projector(mesh)
    values = projector.apply(np.random.default_rng(seed).standard_normal(mesh.n_nodes))
    return amplitude * values / np.abs(values).max()


def test_residual_vanishes_on_the_scherk_surface(coarse_mesh):
    F = residual_F(coarse_mesh, np.zeros(coarse_mesh.n_nodes), 0.0)
    assert np.abs(F).max() < 1e-9
    assert np.all(F[coarse_mesh.boundary] == 0.0)


def test_residual_at_tau_is_order_tau(coarse_mesh):
    tau = 1.0 / 16.0
    F = residual_F(coarse_mesh, np.zeros(coarse_mesh.n_nodes), tau)
    assert 0.0 < np.abs(F).max() < 10.0 * tau


def test_scaling_identity(coarse_mesh):
    tau = 1.0 / 16.0
    h = symmetric_field(coarse_mesh, 0.05, seed=11)
    F = residual_F(coarse_mesh, h, tau)
    R = rescaled_residual(coarse_mesh, h, tau)
    assert np.abs(F - tau * R).max() <= 1e-9


def test_rescaled_residual_needs_nonzero_tau(coarse_mesh):
    with pytest.raises(InvalidParameterError):
        rescaled_residual(coarse_mesh, np.zeros(coarse_mesh.n_nodes), 0.0)


def test_residual_preserves_the_symmetry_class(coarse_mesh):
    h = symmetric_field(coarse_mesh, 0.05, seed=5)
    F = residual_F(coarse_mesh, h, 1.0 / 16.0)
    assert symmetric_projector(coarse_mesh).is_symmetric(F, 1e-8)


def test_jacobian_at_origin_is_the_linearized_operator(coarse_mesh):
    operator = graph_operator(coarse_mesh)
    zero = np.zeros(coarse_mesh.n_nodes)
    full = operator.jacobian(zero, 0.0, mode='full')
    assert abs(full - operator.linearized).max() < 1e-9
    assert operator.jacobian(zero, 0.0) is operator.linearized
    with pytest.raises(InvalidParameterError):
        operator.jacobian(zero, 0.0, mode='secant')


def test_full_jacobian_matches_finite_differences(coarse_mesh):
    operator = graph_operator(coarse_mesh)
    tau = 1.0 / 16.0
    h = symmetric_field(coarse_mesh, 0.02, seed=2)
    direction = symmetric_field(coarse_mesh, 1.0, seed=3)
    step = 1e-6
    numeric = (
        operator.residual(h + step * direction, tau) - operator.residual(h - step * direction, tau)
    ) / (2.0 * step)
    analytic = operator.jacobian(h, tau, mode='full') @ direction
    interior = coarse_mesh.interior
    assert np.abs(numeric[interior] - analytic[interior]).max() < 1e-5 * max(1.0, np.abs(analytic).max())


def test_large_graphs_leave_the_domain(coarse_mesh):
    with pytest.raises(OutOfDomainError) as excinfo:
        residual_F(coarse_mesh, np.full(coarse_mesh.n_nodes, 10.0), 0.0)
    assert 0 <= excinfo.value.node < coarse_mesh.n_nodes


def test_graph_sample_of_the_zero_function():
    p = surface_point(0.3, -0.2)
    geo = pulled_geometry(0.0, p)
    sample = graph_sample(0.0, np.zeros(2), np.zeros((2, 2)), 0.0, geo)
    assert abs(sample.Hh) < 1e-10
    assert sample.btilde == pytest.approx(1.0)
    assert np.allclose(sample.Xh, geo.X0tau)
    assert np.allclose(sample.nuh, geo.nu0tau)


def test_graph_sample_normal_scaling():
    p = surface_point(0.3, -0.2, 'B')
    geo = pulled_geometry(1.0 / 16.0, p)
    sample = graph_sample(0.04, np.array([0.03, -0.05]), np.array([[0.1, 0.02], [0.02, -0.07]]), 1.0 / 16.0, geo)
    assert 0.0 < sample.btilde < 1.0
    nu_tilde = sample.nuh / sample.btilde
    gap = float(np.sum((nu_tilde - geo.nu0tau) ** 2))
    assert sample.btilde ** -2 == pytest.approx(gap + 1.0, abs=1e-12)
    assert np.linalg.norm(sample.nuh) == pytest.approx(1.0, abs=1e-12)
    assert sample.Hh == pytest.approx(float(np.trace(np.linalg.solve(sample.gh, sample.ah))), abs=1e-12)


def test_graph_sample_domain():
    geo = pulled_geometry(0.0, surface_point(0.0, 0.0))
    with pytest.raises(OutOfDomainError):
        graph_sample(0.6, np.zeros(2), np.zeros((2, 2)), 0.0, geo, node=4)


def test_scherk_slab_is_embedded(coarse_mesh):
    report = embeddedness_check(coarse_mesh, np.zeros(coarse_mesh.n_nodes), 0.0)
    assert report.passed
    assert report.intersections == 0
    assert report.clearance == pytest.approx(narrowest_hole_half_width(), rel=0.02)
    assert report.narrowest_hole == pytest.approx(1.2464, abs=1e-4)
    assert report.to_dict()['passed'] is True


def test_constant_offset_under_slight_bending_is_embedded(coarse_mesh):
    report = embeddedness_check(coarse_mesh, np.full(coarse_mesh.n_nodes, 0.05), 1.0 / 300.0)
    assert report.tau_in_claim
    assert report.passes_delta
    assert report.intersections == 0
    assert report.passed


def test_delta_criterion(coarse_mesh):
    h = np.full(coarse_mesh.n_nodes, 0.2)
    report = embeddedness_check(coarse_mesh, h, 0.0, delta=0.125, scan=False)
    assert not report.passes_delta
    assert not report.passed
    assert report.issues


def test_graph_surface_lifts_the_seam(coarse_mesh):
    vertices, slab = graph_surface(coarse_mesh, np.zeros(coarse_mesh.n_nodes), 0.0)
    assert slab.n_vertices == len(vertices)
    lifted = vertices[slab.lifted]
    originals = vertices[slab.source[slab.lifted]]
    assert np.allclose(lifted - originals, [0.0, 2.0 * np.pi, 0.0])


def test_intersection_scan_finds_crossing_triangles():
    vertices = np.array([
        [-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 0.0],
        [0.0, -0.5, -1.0], [0.0, 0.5, -1.0], [0.0, 0.0, 1.0],
    ])
    triangles = np.array([[0, 1, 2], [3, 4, 5]])
    assert len(intersection_scan(vertices, triangles)) == 1

    vertices[3:, 0] += 5.0
    assert len(intersection_scan(vertices, triangles)) == 0
