import math

import numpy as np
import pytest

from stages.stage3_discretize import (
    PUNCTURE_CENTERS,
    SymmetricProjector,
    assemble_lb,
    build_mesh,
    check_mesh,
    harmonic_extension,
    read_mesh,
    triangle_gradients,
    write_mesh,
)
from utils.errors import (
    DegenerateMeshError,
    InfeasibleMeshError,
    InvalidParameterError,
    SymmetryClassError,
)


def test_punctured_mesh_passes_structural_checks(coarse_mesh):
    passed, issues = check_mesh(coarse_mesh)
    assert passed, issues
    assert coarse_mesh.euler_characteristic() == -2
    for circle in range(1, 5):
        assert len(coarse_mesh.boundary_nodes(circle)) > 0


def test_boundary_nodes_sit_on_the_puncture_circles(fine_mesh):
    for circle, centre in enumerate(PUNCTURE_CENTERS, start=1):
        ids = fine_mesh.boundary_nodes(circle)
        rho = np.arccos(np.clip(fine_mesh.nodes[ids] @ centre, -1.0, 1.0))
        assert np.allclose(rho, 0.3, atol=1e-10)


def test_closed_mesh(closed_mesh):
    passed, issues = check_mesh(closed_mesh)
    assert passed, issues
    assert closed_mesh.euler_characteristic() == 2
    assert not closed_mesh.boundary.any()


def test_mesh_preconditions():
    with pytest.raises(InfeasibleMeshError):
        build_mesh(0.8, 3)
    with pytest.raises(InfeasibleMeshError):
        build_mesh(0.0, 3)
    with pytest.raises(InvalidParameterError):
        build_mesh(0.3, -1)


def test_symmetry_maps_reflect_nodes(coarse_mesh):
    nodes = coarse_mesh.nodes
    assert np.array_equal(nodes[coarse_mesh.sym_maps['xz']], nodes * [1.0, -1.0, 1.0])
    assert np.array_equal(nodes[coarse_mesh.sym_maps['yz']], nodes * [-1.0, 1.0, 1.0])


def test_round_operator_annihilates_constants(closed_mesh):
    operator = assemble_lb(closed_mesh)
    ones = np.ones(closed_mesh.n_nodes)
    assert np.abs(operator.stiffness @ ones).max() < 1e-12
    assert operator.lumped.sum() == pytest.approx(4.0 * math.pi, rel=0.01)
    assert operator.mass.sum() == pytest.approx(operator.lumped.sum())


def test_round_operator_rayleigh_quotient_of_coordinates(closed_mesh):
    operator = closed_mesh.round_operator
    x = closed_mesh.nodes[:, 0]
    quotient = x @ (operator.stiffness @ x) / (x @ (operator.mass @ x))
    assert quotient == pytest.approx(2.0, rel=0.03)


def test_sigma_pullback_is_conformal_to_the_round_operator(coarse_mesh):
    round_sphere = assemble_lb(coarse_mesh, 'round_sphere')
    pulled = assemble_lb(coarse_mesh, 'sigma_pullback', 0.0)
    # the Dirichlet energy is conformally invariant in two dimensions
    u = coarse_mesh.nodes[:, 0] * coarse_mesh.nodes[:, 1]
    assert u @ (pulled.stiffness @ u) == pytest.approx(u @ (round_sphere.stiffness @ u), rel=1e-6)
    assert pulled.mass.sum() > round_sphere.mass.sum()


def test_unknown_metric_mode(coarse_mesh):
    with pytest.raises(InvalidParameterError):
        assemble_lb(coarse_mesh, 'flat')


def test_degenerate_triangle_is_rejected():
    nodes = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    with pytest.raises(DegenerateMeshError):
        triangle_gradients(nodes, np.array([[0, 1, 2]]))


def test_projector_onto_the_symmetric_class(coarse_mesh):
    projector = SymmetricProjector(coarse_mesh)
    x, y = coarse_mesh.nodes[:, 0], coarse_mesh.nodes[:, 1]
    assert projector.is_symmetric(x)
    assert np.abs(projector.apply(y)).max() < 1e-15
    rng = np.random.default_rng(7)
    field = projector.apply(rng.standard_normal(coarse_mesh.n_nodes))
    assert np.allclose(projector.apply(field), field, atol=1e-12)


def test_projector_rejects_unknown_class(coarse_mesh):
    with pytest.raises(InvalidParameterError):
        SymmetricProjector(coarse_mesh, 'xz-odd')


def test_reduction_basis_spans_symmetric_fields(coarse_mesh):
    projector = SymmetricProjector(coarse_mesh)
    mask = coarse_mesh.interior
    basis, reps = projector.reduction_basis(mask)
    assert basis.shape == (int(mask.sum()), len(reps))
    coefficients = np.random.default_rng(3).standard_normal(len(reps))
    field = np.zeros(coarse_mesh.n_nodes)
    field[mask] = basis @ coefficients
    assert projector.is_symmetric(field)
    assert np.allclose(field[mask][reps], coefficients)


def test_harmonic_extension_keeps_the_trace(coarse_mesh):
    trace = np.zeros(coarse_mesh.n_nodes)
    trace[coarse_mesh.boundary] = coarse_mesh.nodes[coarse_mesh.boundary, 0]
    u = harmonic_extension(coarse_mesh, trace)
    assert np.array_equal(u[coarse_mesh.boundary], trace[coarse_mesh.boundary])
    assert SymmetricProjector(coarse_mesh).is_symmetric(u, 1e-10)
    residual = coarse_mesh.round_operator.stiffness @ u
    assert np.abs(residual[coarse_mesh.interior]).max() < 1e-10


def test_harmonic_extension_rejects_asymmetric_data(coarse_mesh):
    trace = coarse_mesh.nodes[:, 1].copy()
    with pytest.raises(SymmetryClassError):
        harmonic_extension(coarse_mesh, trace)


def test_chart_derivatives(fine_mesh):
    derivatives = fine_mesh.derivatives
    dh, d2h = derivatives.apply(np.ones(fine_mesh.n_nodes))
    assert np.abs(dh).max() < 1e-10
    assert np.abs(d2h).max() < 1e-8

    e1, e2 = fine_mesh.frames
    dh, _ = derivatives.apply(fine_mesh.nodes[:, 0])
    assert np.abs(dh[:, 0] - e1[:, 0]).max() < 0.1
    assert np.abs(dh[:, 1] - e2[:, 0]).max() < 0.1


def test_mesh_files_round_trip(coarse_mesh, tmp_path):
    obj_path, sidecar = write_mesh(coarse_mesh, str(tmp_path / 'punctured.obj'))
    loaded = read_mesh(obj_path)
    assert np.array_equal(loaded.nodes, coarse_mesh.nodes)
    assert np.array_equal(loaded.triangles, coarse_mesh.triangles)
    assert np.array_equal(loaded.boundary_tag, coarse_mesh.boundary_tag)
    assert loaded.phi0 == coarse_mesh.phi0
