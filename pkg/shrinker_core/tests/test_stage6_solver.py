import math

import numpy as np
import pytest

from stages import stage6_solver
from stages.stage3_discretize import symmetric_projector
from stages.stage6_solver import (
    LinearizedOperator,
    SolveConfig,
    boundary_data,
    build_core,
    linearized_operator,
    newton_solve,
    norm_equivalence,
    random_symmetric_trace,
    reflection_z,
    rotation_z,
    solve_core,
    tau_derivative_field,
)
from utils.errors import InvalidParameterError, NonConvergenceError, SingularOperatorError, SymmetryClassError


def test_solve_config_bounds():
    with pytest.raises(InvalidParameterError):
        SolveConfig(tau=0.2, c0=3.0)
    with pytest.raises(InvalidParameterError):
        SolveConfig(tau=0.0, jacobian_mode='secant')
    with pytest.raises(InvalidParameterError):
        SolveConfig(tau=0.0, max_iters=0)
    config = SolveConfig.from_config({'tau': 0.01, 'c0': 3.0, 'unrelated': 1}, refinement=2)
    assert config.refinement == 2
    assert config.phi0 == pytest.approx(math.acos(math.tanh(3.0)))


def test_random_trace_is_symmetric_and_bounded(coarse_mesh):
    f = random_symmetric_trace(coarse_mesh, 1e-3, seed=4)
    assert np.abs(f).max() == pytest.approx(1e-3)
    assert np.all(f[coarse_mesh.interior] == 0.0)
    assert symmetric_projector(coarse_mesh).is_symmetric(f)
    assert np.array_equal(f, boundary_data(coarse_mesh, 'random', 1e-3, 4))
    assert not boundary_data(coarse_mesh, 'zero', 1e-3, 4).any()
    with pytest.raises(InvalidParameterError):
        boundary_data(coarse_mesh, 'gaussian', 1e-3, 4)


def test_zero_data_at_zero_tau_is_solved_by_zero(coarse_mesh):
    result = newton_solve(coarse_mesh, np.zeros(coarse_mesh.n_nodes), SolveConfig(tau=0.0, refinement=3))
    assert result.converged
    assert result.iterations == 1
    assert result.updates == 0
    assert np.abs(result.h).max() == 0.0
    assert result.norm_ratio == 1.0


def test_newton_converges_quadratically_with_the_full_jacobian(core_mesh):
    tau = 1.0 / 16.0
    f = random_symmetric_trace(core_mesh, 1e-3, seed=20240611)
    config = SolveConfig(tau=tau, refinement=3, jacobian_mode='full')
    result = newton_solve(core_mesh, f, config)

    assert result.converged
    assert result.updates <= 12
    assert result.weighted_residual <= config.newton_tol
    assert result.symmetric
    assert result.embedded
    assert result.boundary_error == 0.0
    assert 0.5 < result.norm_ratio < 2.0
    report = result.to_dict()
    assert report['iterations'] == result.iterations
    assert report['updates'] == result.iterations - 1
    assert report['warnings'] == []
    assert report['embedding']['passed'] is True


def test_chord_at_origin_meets_the_update_bound(core_mesh_fine):
    tau = 1.0 / 16.0
    f = random_symmetric_trace(core_mesh_fine, 1e-3, seed=20240611)
    config = SolveConfig(tau=tau, refinement=4, newton_tol=1e-9)
    assert config.jacobian_mode == 'chord_at_origin'
    result = newton_solve(core_mesh_fine, f, config)

    assert result.converged
    assert result.updates <= 12
    assert result.weighted_residual <= 1e-9
    assert result.symmetric
    assert result.embedded
    # frozen Jacobian: the residual contracts at every step
    history = result.residual_history
    assert all(later < earlier for earlier, later in zip(history, history[1:]))


def test_solve_refuses_a_singular_linearization(coarse_mesh):
    config = SolveConfig(tau=0.0, refinement=3, kernel_min_gap=1e3)
    with pytest.raises(SingularOperatorError):
        newton_solve(coarse_mesh, np.zeros(coarse_mesh.n_nodes), config)


def test_run_solve_reads_the_kernel_gap(defaults):
    defaults.update({'tau': 0.0, 'kernel_min_gap': 1e3})
    result = stage6_solver.run_solve(defaults)
    assert not result['success']
    assert 'eigenvalue within' in result['error']


def test_non_embedded_solution_carries_a_warning(core_mesh):
    f = random_symmetric_trace(core_mesh, 1e-3, seed=7)
    config = SolveConfig(tau=0.0, refinement=3, jacobian_mode='full', embed_delta=1e-6, scan_embedding=False)
    result = newton_solve(core_mesh, f, config)
    assert result.converged
    assert not result.embedded
    report = result.to_dict()
    assert report['embedded'] is False
    assert report['embedding']['passed'] is False
    assert report['warnings'] and report['warnings'][0].startswith('not embedded')


def test_chord_at_tau_reaches_the_same_solution(core_mesh):
    tau = 1.0 / 16.0
    f = random_symmetric_trace(core_mesh, 1e-3, seed=20240611)
    full = newton_solve(core_mesh, f, SolveConfig(tau=tau, refinement=3, jacobian_mode='full'))
    chord = newton_solve(core_mesh, f, SolveConfig(tau=tau, refinement=3, jacobian_mode='chord_at_tau'))
    assert chord.converged
    assert np.abs(chord.h - full.h).max() < 1e-7


def test_newton_reports_the_history_on_failure(coarse_mesh):
    f = random_symmetric_trace(coarse_mesh, 1e-3, seed=1)
    config = SolveConfig(tau=1.0 / 16.0, refinement=3, max_iters=1, newton_tol=1e-14)
    with pytest.raises(NonConvergenceError) as excinfo:
        newton_solve(coarse_mesh, f, config)
    assert len(excinfo.value.history) == 1
    assert excinfo.value.iterate is not None


def test_newton_gates(coarse_mesh):
    big = random_symmetric_trace(coarse_mesh, 0.05, seed=1)
    with pytest.raises(InvalidParameterError):
        newton_solve(coarse_mesh, big, SolveConfig(tau=0.0, refinement=3))
    with pytest.raises(InvalidParameterError):
        newton_solve(coarse_mesh, np.zeros(coarse_mesh.n_nodes), SolveConfig(tau=0.1, eta0=0.0625))


def test_linearized_operator_works_in_the_symmetric_class(coarse_mesh):
    operator = linearized_operator(coarse_mesh)
    assert operator.gap > 0
    x = coarse_mesh.nodes[:, 0]
    assert np.array_equal(operator(x), operator.matrix @ x)
    with pytest.raises(SymmetryClassError):
        operator.apply(coarse_mesh.nodes[:, 1])

    rhs = operator.matrix @ (x * (1.0 - coarse_mesh.nodes[:, 2] ** 2))
    u = operator.solve(rhs)
    assert np.all(u[coarse_mesh.boundary] == 0.0)
    residual = operator.matrix @ u - symmetric_projector(coarse_mesh).apply(rhs)
    assert np.abs(residual[coarse_mesh.interior]).max() < 1e-9


def test_linearized_operator_without_kernel_gate(coarse_mesh):
    operator = LinearizedOperator(coarse_mesh, check_kernel=False)
    assert operator.gap is None


def test_tau_derivative_field_is_symmetric(coarse_mesh):
    v = tau_derivative_field(coarse_mesh)
    assert np.abs(v).max() > 0
    assert symmetric_projector(coarse_mesh).is_symmetric(v, 1e-6)
    with pytest.raises(InvalidParameterError):
        tau_derivative_field(coarse_mesh, 0.0)


def test_tau_derivative_field_does_not_depend_on_the_step(coarse_mesh):
    coarse = tau_derivative_field(coarse_mesh, 1e-4)
    fine = tau_derivative_field(coarse_mesh, 1e-5)
    assert np.abs(coarse - fine).max() <= 1e-6 * max(1.0, np.abs(fine).max())


def test_norm_equivalence_of_zero_is_one(coarse_mesh):
    assert norm_equivalence(coarse_mesh, np.zeros(coarse_mesh.n_nodes), 0.05) == 1.0


def test_rotations_and_reflections():
    assert np.allclose(rotation_z(0.5 * math.pi) @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    mirror = reflection_z(0.25 * math.pi)
    assert np.allclose(mirror @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    assert np.allclose(mirror @ mirror, np.eye(3))


def test_approximate_core_topology(core_mesh):
    n = 8
    core = build_core(core_mesh, n)
    vertices, faces = core['vertices'], core['faces']
    chi = len(vertices) - len(np.unique(np.sort(np.concatenate(
        [faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1), axis=0)) + len(faces)
    assert chi == -2 * n
    assert stage6_solver._boundary_loops(faces, len(vertices)) == 4
    assert np.abs(core['h_tilde']).max() == 0.0


def test_corrected_core(core_mesh, defaults):
    result = solve_core(8, 3.0, np.zeros(core_mesh.n_nodes), defaults, mesh=core_mesh)
    assert result.solve.converged
    assert result.euler_characteristic == -16
    assert result.boundary_loops == 4
    assert result.handles == 8
    assert result.mirror_defect < 1e-10
    assert result.rotation_defect < 1e-10
    assert result.rescaled_residual <= 16.0 * defaults['newton_tol']
    assert result.plane_distance < 1.0
    assert result.to_dict()['handles'] == 8


def test_core_gates(core_mesh, defaults):
    with pytest.raises(InvalidParameterError):
        solve_core(4, 3.0, np.zeros(core_mesh.n_nodes), defaults, mesh=core_mesh)
    too_big = np.full(core_mesh.n_nodes, 1e-3)
    with pytest.raises(InvalidParameterError):
        solve_core(8, 3.0, too_big, defaults, mesh=core_mesh)


def test_run_solve_reports_failures(defaults):
    defaults.update({'tau': 0.5})
    result = stage6_solver.run_solve(defaults)
    assert not result['success']
    assert 'error' in result


def test_run_core_approximate(defaults):
    defaults.update({'n': 8})
    result = stage6_solver.run_core(defaults)
    assert result['success']
    assert result['report']['handles'] == 8
    assert result['report']['solve'] is None
